#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "adstruct/postproc.hpp"

using namespace adstruct;
using namespace adstruct::post;
using seg::ScoredProposal;

namespace {

ScoredProposal prop(std::size_t first, std::size_t last, double score) {
    ScoredProposal p;
    p.first = first;
    p.last = last;
    p.p_prop = score;
    return p;
}

// Gap proposals get a recognisable score.
RescoreFn marker(double score = -1.0) {
    return [score](std::size_t f, std::size_t l) { return prop(f, l, score); };
}

bool tiles(const std::vector<ScoredProposal>& segs, std::size_t clips) {
    std::size_t next = 0;
    for (const auto& s : segs) {
        if (s.first != next || s.last < s.first) return false;
        next = s.last + 1;
    }
    return next == clips;
}

// Classic greedy NMS, written as "repeatedly take the best remaining
// candidate, then drop everything that overlaps it".
std::vector<std::pair<std::size_t, std::size_t>> oracle_greedy(std::vector<ScoredProposal> c) {
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    while (!c.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < c.size(); ++i) {
            const auto& a = c[i];
            const auto& b = c[best];
            if (a.p_prop > b.p_prop || (a.p_prop == b.p_prop && (a.first < b.first || (a.first == b.first && a.last < b.last)))) best = i;
        }
        const auto top = c[best];
        kept.emplace_back(top.first, top.last);
        std::vector<ScoredProposal> rest;
        for (const auto& x : c)
            if (x.last < top.first || x.first > top.last) rest.push_back(x);
        c = rest;
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace

TEST_CASE("NMS: single whole-video candidate") {
    auto out = nms_nonoverlap({prop(0, 7, 0.3)}, 8, marker());
    REQUIRE(out.size() == 1);
    CHECK(out[0].first == 0);
    CHECK(out[0].last == 7);
    CHECK(out[0].p_prop == 0.3);
}

TEST_CASE("NMS: identical spans keep the higher score") {
    auto out = nms_nonoverlap({prop(0, 7, 0.8), prop(0, 7, 0.9)}, 8, marker());
    REQUIRE(out.size() == 1);
    CHECK(out[0].p_prop == 0.9);
}

TEST_CASE("NMS: worked example with gap fill") {
    std::vector<ScoredProposal> c{prop(0, 4, 0.9), prop(3, 7, 0.8), prop(5, 7, 0.5)};
    auto out = nms_nonoverlap(c, 8, marker());
    REQUIRE(out.size() == 2);
    CHECK((out[0].first == 0 && out[0].last == 4));
    CHECK((out[1].first == 5 && out[1].last == 7));

    // A ninth clip is left uncovered and becomes its own rescored proposal.
    auto filled = nms_nonoverlap(c, 9, marker(0.123));
    REQUIRE(filled.size() == 3);
    CHECK((filled[2].first == 8 && filled[2].last == 8));
    CHECK(filled[2].p_prop == 0.123);

    // Merge mode extends the neighbour instead.
    auto merged = nms_nonoverlap(c, 9, [](std::size_t f, std::size_t l) { return prop(f, l, 0.4); }, GapMode::Merge);
    REQUIRE(merged.size() == 2);
    CHECK((merged[1].first == 5 && merged[1].last == 8));
}

TEST_CASE("NMS: empty candidate list falls back to the whole video") {
    auto out = nms_nonoverlap({}, 6, marker(0.2));
    REQUIRE(out.size() == 1);
    CHECK((out[0].first == 0 && out[0].last == 5));
}

TEST_CASE("NMS: merge picks the higher-scoring neighbour") {
    std::vector<ScoredProposal> c{prop(0, 2, 0.3), prop(5, 7, 0.9)};
    auto rescore = [&](std::size_t f, std::size_t l) { return prop(f, l, f == 0 ? 0.3 : 0.9); };
    auto out = nms_nonoverlap(c, 8, rescore, GapMode::Merge);
    REQUIRE(out.size() == 2);
    CHECK(out[0].last == 2);
    CHECK(out[1].first == 3);
}

TEST_CASE("NMS: matches the greedy oracle and tiles on random instances") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t clips = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
        std::vector<ScoredProposal> c;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t a = std::uniform_int_distribution<std::size_t>(0, clips - 1)(rng);
            std::size_t b = std::uniform_int_distribution<std::size_t>(0, clips - 1)(rng);
            if (a > b) std::swap(a, b);
            c.push_back(prop(a, b, std::round(u(rng) * 20) / 20));  // coarse scores force ties
        }
        auto kept = greedy_select(c);
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (const auto& k : kept) spans.emplace_back(k.first, k.last);
        CHECK(spans == oracle_greedy(c));
        for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1].last < kept[i].first);

        for (auto mode : {GapMode::Fill, GapMode::Merge}) {
            auto out = nms_nonoverlap(c, clips, marker(0.0), mode);
            CHECK(tiles(out, clips));
        }
    }
}

TEST_CASE("NMS: candidates outside the video are rejected") {
    CHECK_THROWS_AS(nms_nonoverlap({prop(2, 9, 0.5)}, 8, marker()), InputError);
}

TEST_CASE("scene frames at or below 0.1 are dropped") {
    auto kept = retain_scene_frames({{3.0, 0.1}, {1.0, 0.11}, {2.0, 0.05}, {4.0, 0.9}});
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].time == 1.0);
    CHECK(kept[1].time == 4.0);
}

TEST_CASE("alignment: worked cases") {
    CHECK(scene_guided_align({4.0}, {}, 10.0) == std::vector<double>{4.0});
    CHECK(scene_guided_align({4.0}, {{4.3, 0.6}}, 10.0) == std::vector<double>{4.3});
    CHECK(scene_guided_align({4.0}, {{4.6, 0.6}}, 10.0) == std::vector<double>{4.0});
    CHECK(scene_guided_align({4.0}, {{4.5, 0.6}}, 10.0) == std::vector<double>{4.0});  // 0.5 s is not "less than"
    CHECK(scene_guided_align({4.0}, {{4.3, 0.05}}, 10.0) == std::vector<double>{4.0});
    // Equidistant frames: the earlier wins.
    CHECK(scene_guided_align({4.0}, {{4.2, 0.5}, {3.8, 0.5}}, 10.0) == std::vector<double>{3.8});
    // A move that would leave a sliver under 0.1 s is cancelled.
    CHECK(scene_guided_align({0.3}, {{0.05, 0.9}}, 10.0) == std::vector<double>{0.3});
    // One frame cannot pull two boundaries across each other.
    auto two = scene_guided_align({4.0, 4.4}, {{4.2, 0.9}}, 10.0);
    CHECK(two[0] < two[1]);
    CHECK(two == std::vector<double>{4.2, 4.4});
}

TEST_CASE("alignment of a segmentation keeps the video edges") {
    std::vector<TimedSegment> segs{{0, 4}, {4, 7}, {7, 10}};
    auto out = align_segmentation(segs, {{0.2, 0.9}, {4.3, 0.9}, {9.9, 0.9}});
    REQUIRE(out.size() == 3);
    CHECK(out.front().start_s == 0.0);
    CHECK(out.back().end_s == 10.0);
    CHECK(out[1].start_s == 4.3);
    CHECK(out[2].start_s == 7.0);
}

TEST_CASE("alignment properties on random instances") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        const double duration = 0.5 * std::uniform_int_distribution<int>(4, 40)(rng);
        std::vector<double> b;
        for (double t = 0.5; t < duration - 1e-9; t += 0.5)
            if (u(rng) < 0.3) b.push_back(t);
        std::vector<data::SceneFrame> frames;
        const int nf = std::uniform_int_distribution<int>(0, 8)(rng);
        for (int k = 0; k < nf; ++k) frames.push_back({u(rng) * duration, u(rng)});
        if (u(rng) < 0.3 && !b.empty()) frames.push_back({b[0] + 0.25, 0.5});  // exact ties sometimes

        auto once = scene_guided_align(b, frames, duration);
        auto twice = scene_guided_align(once, frames, duration);
        CHECK(once == twice);
        REQUIRE(once.size() == b.size());
        for (std::size_t i = 0; i < b.size(); ++i) {
            CHECK(std::abs(once[i] - b[i]) < 0.5);
            if (i) CHECK(once[i] - once[i - 1] >= kMinSegmentSeconds - 1e-12);
        }
        if (!once.empty()) {
            CHECK(once.front() >= kMinSegmentSeconds - 1e-12);
            CHECK(duration - once.back() >= kMinSegmentSeconds - 1e-12);
        }
        CHECK(scene_guided_align(b, {}, duration) == b);
    }
}
