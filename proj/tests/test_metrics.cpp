#include <catch2/catch_amalgamated.hpp>

#include "adstruct/metrics.hpp"
#include "support/oracles.hpp"

using namespace adstruct;
using namespace adstruct::metrics;

namespace {

std::vector<std::vector<Interval>> pred_intervals(const oracle::Instance& in) {
    std::vector<std::vector<Interval>> out;
    for (const auto& p : in.preds) out.push_back(intervals_of(p.segments));
    return out;
}

std::vector<std::vector<Interval>> gt_intervals(const oracle::Instance& in) {
    std::vector<std::vector<Interval>> out;
    for (const auto& t : in.truths) out.push_back(intervals_of(t.segments));
    return out;
}

VideoPrediction perfect_prediction(const VideoTruth& t) {
    VideoPrediction p{t.id, {}};
    for (const auto& g : t.segments) {
        PredictedSegment s{g.start_s, g.end_s, {}};
        for (auto l : g.labels) s.categories.push_back({l, 1.0});
        p.segments.push_back(s);
    }
    return p;
}

}  // namespace

TEST_CASE("interval IoU") {
    CHECK(interval_iou({1, 3}, {1, 3}) == 1.0);
    CHECK(interval_iou({0, 1}, {2, 3}) == 0.0);
    CHECK(interval_iou({0, 2}, {1, 3}) == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(interval_iou({1, 1}, {0, 2}), InputError);
}

TEST_CASE("thresholds are 0.50 to 0.95 in steps of 0.05") {
    auto t = iou_thresholds();
    CHECK(t.front() == 0.5);
    CHECK(t.back() == 0.95);
    CHECK(t[3] == 0.65);
}

TEST_CASE("AUC: identical, hopeless and the two-segment trace") {
    std::vector<std::vector<Interval>> gt{{{0, 10}, {10, 20}}};
    CHECK(segmentation_auc(gt, gt).auc == 1.0);
    CHECK(segmentation_auc({{{0, 3}, {3, 20}}}, {{{0, 10}}}).auc == 0.0);

    // A matched at IoU 0.72 and B at 0.51 (each pred overlaps only its GT).
    std::vector<std::vector<Interval>> g2{{{0, 10}, {20, 30}}};
    std::vector<std::vector<Interval>> p2{{{0, 7.2}, {20, 25.1}}};
    auto r = segmentation_auc(p2, g2);
    const std::array<double, 10> expect{1.0, 0.5, 0.5, 0.5, 0.5, 0, 0, 0, 0, 0};
    for (std::size_t k = 0; k < 10; ++k) CHECK(r.recalls[k] == expect[k]);
    CHECK(r.auc == Catch::Approx(0.30).epsilon(1e-12));  // mean of the recalls above
}

TEST_CASE("AUC: videos without GT are skipped") {
    auto r = segmentation_auc({{}, {{0, 1}}}, {{}, {{0, 1}}});
    CHECK(r.skipped_videos == 1);
    CHECK(r.auc == 1.0);
}

TEST_CASE("boundary F1: exact, far and doubly-claimed boundaries") {
    CHECK(boundary_f1({{4.0}}, {{4.0}}).f1 == 1.0);
    auto far = boundary_f1({{4.6}}, {{4.0}});
    CHECK(far.true_positives == 0);
    CHECK(far.f1 == 0.0);
    auto twice = boundary_f1({{3.7, 4.4}}, {{4.0}});
    CHECK(twice.true_positives == 1);
    CHECK(twice.predicted == 2);
    CHECK(twice.precision == 0.5);
    CHECK(twice.recall == 1.0);
    CHECK(boundary_f1({{}}, {{}}).f1 == 1.0);
    CHECK(boundary_f1({{}}, {{2.0}}).f1 == 0.0);
    CHECK(boundary_f1({{2.0}}, {{2.5}}).true_positives == 1);  // 0.5 s counts as within
}

TEST_CASE("boundary F1: swapping sides with equal counts leaves F1 unchanged") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 20);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a, b;
        const int n = std::uniform_int_distribution<int>(0, 5)(rng);
        for (int i = 0; i < n; ++i) {
            a.push_back(u(rng));
            b.push_back(u(rng));
        }
        CHECK(boundary_f1({a}, {b}).f1 == boundary_f1({b}, {a}).f1);
    }
}

TEST_CASE("boundary extraction excludes the video edges") {
    auto b = internal_boundaries({{0, 2}, {2, 5}, {5, 8}}, 8.0);
    CHECK(b == std::vector<double>{2.0, 5.0});
}

TEST_CASE("AP envelope on a hand trace") {
    // TP, FP, TP with 2 positives: precisions 1, 0.5, 2/3 -> (1 + 2/3) / 2.
    CHECK(average_precision({true, false, true}, 2) == Catch::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(average_precision({false, false}, 1) == 0.0);
}

TEST_CASE("mAP: three proposals, two categories, against the oracle") {
    VideoTruth t{"a", 6.0, {{0, 2, {0}}, {2, 4, {1}}, {4, 6, {0}}}};
    VideoPrediction p{"a",
                      {{0, 2, {{0, 0.9}, {1, 0.3}}}, {2, 4, {{1, 0.8}, {0, 0.4}}}, {4, 6, {{1, 0.7}, {0, 0.2}}}}};
    auto r = detection_map({p}, {t}, 2);
    CHECK(r.categories_present == 2);
    CHECK(std::abs(r.map - oracle::map({p}, {t}, 2)) < 1e-12);
    // Category 0: ranks TP(0.9), FP(0.4), TP(0.2) -> 5/6; category 1: TP(0.8) first -> 1.
    CHECK(r.map == Catch::Approx((5.0 / 6.0 + 1.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("mAP: perfect and all-wrong predictions") {
    VideoTruth t{"a", 6.0, {{0, 2, {0}}, {2, 6, {1, 2}}}};
    CHECK(detection_map({perfect_prediction(t)}, {t}, 4).map == 1.0);
    VideoPrediction wrong{"a", {{0, 2, {{3, 0.9}}}, {2, 6, {{3, 0.8}, {0, 0.2}}}}};
    CHECK(detection_map({wrong}, {t}, 4).map == 0.0);
}

TEST_CASE("overall is the product") {
    CHECK(overall(1, 1) == 1.0);
    CHECK(overall(0.744, 0.809) == Catch::Approx(0.602).margin(5e-4));
    CHECK(overall(0.5, 0.8) == 0.4);
}

TEST_CASE("metrics match brute-force oracles on random instances") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        auto inst = oracle::random_instance(rng);
        auto P = pred_intervals(inst), G = gt_intervals(inst);
        INFO("trial " << trial);
        CHECK(std::abs(segmentation_auc(P, G).auc - oracle::auc(P, G)) <= 1e-9);

        std::vector<std::vector<double>> pb, gb, opb, ogb;
        for (std::size_t v = 0; v < G.size(); ++v) {
            pb.push_back(internal_boundaries(P[v], inst.truths[v].duration_s));
            gb.push_back(internal_boundaries(G[v], inst.truths[v].duration_s));
            opb.push_back(oracle::boundaries(P[v], inst.truths[v].duration_s));
            ogb.push_back(oracle::boundaries(G[v], inst.truths[v].duration_s));
        }
        CHECK(std::abs(boundary_f1(pb, gb).f1 - oracle::f1(opb, ogb)) <= 1e-9);
        CHECK(std::abs(detection_map(inst.preds, inst.truths, inst.categories).map -
                       oracle::map(inst.preds, inst.truths, inst.categories)) <= 1e-9);
    }
}

TEST_CASE("metrics are invariant to video order and bounded") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        auto inst = oracle::random_instance(rng);
        auto r1 = evaluate(inst.preds, inst.truths, inst.categories);
        std::reverse(inst.preds.begin(), inst.preds.end());
        std::reverse(inst.truths.begin(), inst.truths.end());
        auto r2 = evaluate(inst.preds, inst.truths, inst.categories);
        CHECK(std::abs(r1.auc - r2.auc) < 1e-12);
        CHECK(std::abs(r1.map - r2.map) < 1e-12);
        CHECK(r1.f1 == r2.f1);
        for (double v : {r1.auc, r1.f1, r1.overall, r1.map}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(r1.overall == r1.auc * r1.f1);
    }
}

TEST_CASE("GT evaluated against itself scores exactly 1") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto inst = oracle::random_instance(rng);
        std::vector<VideoPrediction> self;
        for (const auto& t : inst.truths) self.push_back(perfect_prediction(t));
        auto r = evaluate(self, inst.truths, inst.categories);
        CHECK(r.auc == 1.0);
        CHECK(r.f1 == 1.0);
        CHECK(r.overall == 1.0);
        CHECK(r.map == 1.0);
    }
}

TEST_CASE("report table has AUC, F1, Overall and mAP columns") {
    EvalReport r;
    r.auc = 0.744;
    r.f1 = 0.809;
    r.overall = overall(r.auc, r.f1);
    r.map = 0.295;
    auto table = format_table({{"all", r}});
    CHECK(table.find("AUC") != std::string::npos);
    CHECK(table.find("Overall") != std::string::npos);
    CHECK(table.find("74.4") != std::string::npos);
    CHECK(table.find("80.9") != std::string::npos);
    CHECK(table.find("60.2") != std::string::npos);
    auto j = to_json(r);
    CHECK(j.contains("auc_mean_recall"));
}
