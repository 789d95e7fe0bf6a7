#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "esc/boundary.hpp"
#include "esc/correlation.hpp"
#include "esc/error.hpp"
#include "esc/events.hpp"
#include "test_util.hpp"

using namespace esc;
using events::BoundaryMap;
using events::EventRecord;
using events::EventStream;
using events::SemanticMask;

namespace {

// Window mean compared against the centre in floating point, ignore-aware.
BoundaryMap boundary_oracle(const SemanticMask& m, int k) {
  BoundaryMap out(m.height, m.width);
  const int r = k / 2;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(y, x) == events::kIgnoreLabel) continue;
      double sum = 0;
      int n = 0;
      for (int yy = y - r; yy <= y + r; ++yy) {
        for (int xx = x - r; xx <= x + r; ++xx) {
          if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width || m.at(yy, xx) == events::kIgnoreLabel) continue;
          sum += m.at(yy, xx);
          ++n;
        }
      }
      out.at(y, x) = std::abs(sum / n - m.at(y, x)) > 1e-12 ? 1 : 0;
    }
  }
  return out;
}

// Chebyshev distance <= iters to any seed pixel.
BoundaryMap dilation_oracle(const BoundaryMap& b, int iters) {
  BoundaryMap out(b.height, b.width);
  for (int y = 0; y < b.height; ++y) {
    for (int x = 0; x < b.width; ++x) {
      for (int yy = std::max(0, y - iters); yy <= std::min(b.height - 1, y + iters) && !out.at(y, x); ++yy) {
        for (int xx = std::max(0, x - iters); xx <= std::min(b.width - 1, x + iters); ++xx) {
          if (b.at(yy, xx)) {
            out.at(y, x) = 1;
            break;
          }
        }
      }
    }
  }
  return out;
}

EventStream make_stream(int w, int h, std::int64_t t0, std::int64_t t1, std::vector<EventRecord> ev) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.t_start = t0;
  s.t_end = t1;
  s.events = std::move(ev);
  std::sort(s.events.begin(), s.events.end(), events::event_less);
  return s;
}

EventStream random_stream(int w, int h, int count, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xe7);
  std::vector<EventRecord> ev;
  for (int i = 0; i < count; ++i) {
    ev.push_back({static_cast<std::uint16_t>(uniform_int(rng, 0, w - 1)), static_cast<std::uint16_t>(uniform_int(rng, 0, h - 1)),
                  uniform_int(rng, 1, 10000), static_cast<std::int8_t>(uniform(rng) < 0.5 ? -1 : 1)});
  }
  return make_stream(w, h, 0, 10000, std::move(ev));
}

}  // namespace

TEST(Boundary, ConstantMaskHasNoBoundary) {
  const SemanticMask m(12, 9, 3);
  EXPECT_EQ(events::extract_boundary(m).count(), 0u);
}

TEST(Boundary, VerticalSplitMarksTwoColumns) {
  SemanticMask m(8, 8, 1);
  for (int y = 0; y < 8; ++y) {
    for (int x = 4; x < 8; ++x) m.at(y, x) = 2;
  }
  const BoundaryMap b = events::extract_boundary(m, 3);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) EXPECT_EQ(b.at(y, x), (x == 3 || x == 4) ? 1 : 0) << y << "," << x;
  }
}

TEST(Boundary, CheckerboardInteriorIsAllEdges) {
  SemanticMask m(4, 4, 1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) m.at(y, x) = ((x + y) % 2) ? 2 : 1;
  }
  const BoundaryMap b = events::extract_boundary(m, 3);
  for (int y = 1; y < 3; ++y) {
    for (int x = 1; x < 3; ++x) EXPECT_EQ(b.at(y, x), 1);
  }
  EXPECT_EQ(b, boundary_oracle(m, 3));
}

TEST(Boundary, MatchesWindowMeanOracle) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const SemanticMask m = test::random_mask(17, 23, 4, seed, seed % 2 ? 0.1 : 0.0);
    for (int k : {3, 5}) EXPECT_EQ(events::extract_boundary(m, k), boundary_oracle(m, k)) << "seed " << seed << " k " << k;
  }
}

TEST(Boundary, EvenKernelRejected) {
  EXPECT_THROW(events::extract_boundary(SemanticMask(4, 4, 1), 4), ConfigError);
  EXPECT_THROW(events::extract_boundary(SemanticMask(4, 4, 1), 1), ConfigError);
}

TEST(Boundary, InvalidLabelRejected) {
  SemanticMask m(4, 4, 1, 3);
  m.at(1, 1) = 9;
  EXPECT_THROW(events::extract_boundary(m), InputError);
}

TEST(Dilation, ZeroIterationsIsIdentity) {
  const BoundaryMap b = events::extract_boundary(test::random_mask(10, 10, 3, 4));
  EXPECT_EQ(events::dilate_boundary(b, 0), b);
}

TEST(Dilation, CentrePixelGrowsToBlock) {
  BoundaryMap b(7, 7);
  b.at(3, 3) = 1;
  const BoundaryMap d = events::dilate_boundary(b, 1);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) EXPECT_EQ(d.at(y, x), (std::abs(y - 3) <= 1 && std::abs(x - 3) <= 1) ? 1 : 0);
  }
}

TEST(Dilation, ComposesAndMatchesDistanceOracle) {
  Rng rng = make_rng(11);
  BoundaryMap b(16, 16);
  for (auto& v : b.edges) v = uniform(rng) < 0.04 ? 1 : 0;
  BoundaryMap step = b;
  for (int i = 0; i < 4; ++i) step = events::dilate_boundary(step, 1);
  EXPECT_EQ(events::dilate_boundary(b, 4), step);
  EXPECT_EQ(events::dilate_boundary(b, 4), dilation_oracle(b, 4));
  EXPECT_THROW(events::dilate_boundary(b, -1), ConfigError);
}

TEST(VoxelGrid, EmptyStreamGivesZeros) {
  const auto g = events::build_voxel_grid(make_stream(6, 4, 0, 100, {}), 5);
  EXPECT_EQ(g.data.shape(), (std::vector<int>{5, 4, 6}));
  EXPECT_EQ(g.data.max_abs(), 0.0);
}

TEST(VoxelGrid, EventAtBinCentreHitsOneCell) {
  // t* = 4 * (t - 0) / 100 = 2 at t = 50.
  const auto g = events::build_voxel_grid(make_stream(6, 4, 0, 100, {{2, 1, 50, 1}}), 5);
  for (int k = 0; k < 5; ++k) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 6; ++x) EXPECT_EQ(g.data.at(k, y, x), (k == 2 && y == 1 && x == 2) ? 1.0 : 0.0);
    }
  }
}

TEST(VoxelGrid, MatchesScalarAccumulation) {
  const EventStream s = random_stream(9, 7, 50, 3);
  const int bins = 5;
  Tensor oracle({bins, 7, 9});
  for (const auto& e : s.events) {
    const double ts = (bins - 1) * static_cast<double>(e.t - s.t_start) / static_cast<double>(s.t_end - s.t_start);
    for (int k = 0; k < bins; ++k) {
      const double w = std::max(0.0, 1.0 - std::abs(ts - k));
      oracle.at(k, e.y, e.x) += e.p * w;
    }
  }
  const auto g = events::build_voxel_grid(s, bins);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(g.data[i], oracle[i], 1e-12);
}

TEST(VoxelGrid, SignedMassIsConserved) {
  // Triangle weights of neighbouring bins sum to one, so the grid total is
  // the polarity sum.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EventStream s = random_stream(11, 5, 80, seed);
    double polarity = 0;
    for (const auto& e : s.events) polarity += e.p;
    const auto grid = events::build_voxel_grid(s, 5);
    double total = 0;
    for (double v : grid.data.values()) total += v;
    EXPECT_NEAR(total, polarity, 1e-9);
  }
}

TEST(VoxelGrid, EmptyWindowRejected) {
  EXPECT_THROW(events::build_voxel_grid(make_stream(4, 4, 10, 10, {}), 5), InputError);
}

TEST(EventStream, FileRoundTrip) {
  test::TempDir dir("evt");
  const EventStream s = random_stream(31, 17, 200, 8);
  events::write_event_file(dir.path() / "a.evt", s);
  EXPECT_EQ(events::read_event_file(dir.path() / "a.evt", s.t_start, s.t_end), s);
}

TEST(EventStream, SliceKeepsHalfOpenWindow) {
  const EventStream s = make_stream(4, 4, 0, 100, {{0, 0, 10, 1}, {1, 0, 20, -1}, {2, 0, 30, 1}});
  const EventStream sl = s.slice(10, 30);
  ASSERT_EQ(sl.events.size(), 2u);
  EXPECT_EQ(sl.events[0].t, 20);
  EXPECT_EQ(sl.events[1].t, 30);
  EXPECT_NO_THROW(sl.validate());
}

TEST(EventStream, ValidateCatchesBrokenInvariants) {
  EXPECT_THROW(make_stream(4, 4, 0, 100, {{4, 0, 10, 1}}).validate(), InputError);
  EXPECT_THROW(make_stream(4, 4, 0, 100, {{0, 0, 0, 1}}).validate(), InputError);
  EXPECT_THROW(make_stream(4, 4, 0, 100, {{0, 0, 5, 2}}).validate(), InputError);
}

TEST(EventStream, CsvFixtureParses) {
  test::TempDir dir("csv");
  std::FILE* f = std::fopen((dir.path() / "ev.csv").c_str(), "w");
  std::fputs("# x,y,t,p\n1,2,30,1\n0,0,40,-1\n", f);
  std::fclose(f);
  const EventStream s = events::read_event_csv(dir.path() / "ev.csv", 4, 4, 0, 100);
  ASSERT_EQ(s.events.size(), 2u);
  EXPECT_EQ(s.events[0], (EventRecord{1, 2, 30, 1}));
  EXPECT_EQ(s.events[1].p, -1);
}

TEST(EdgeRatios, LimitingCases) {
  const EventStream s = random_stream(10, 10, 40, 1);
  BoundaryMap ones(10, 10);
  std::fill(ones.edges.begin(), ones.edges.end(), 1);
  const auto a = events::edge_event_ratios(s, ones);
  EXPECT_DOUBLE_EQ(a.edge_pixel_ratio, 1.0);
  EXPECT_DOUBLE_EQ(a.edge_event_ratio, 1.0);
  const auto b = events::edge_event_ratios(s, BoundaryMap(10, 10));
  EXPECT_DOUBLE_EQ(b.edge_pixel_ratio, 0.0);
  EXPECT_DOUBLE_EQ(b.edge_event_ratio, 0.0);
}

TEST(EdgeRatios, CountingOracle) {
  // Edge = the first two rows of a 10x10 plane (20%); 37 of 100 events on it.
  BoundaryMap b(10, 10);
  for (int x = 0; x < 10; ++x) b.at(0, x) = b.at(1, x) = 1;
  std::vector<EventRecord> ev;
  for (int i = 0; i < 100; ++i) {
    const int y = i < 37 ? i % 2 : 2 + i % 8;
    ev.push_back({static_cast<std::uint16_t>(i % 10), static_cast<std::uint16_t>(y), i + 1, 1});
  }
  const auto r = events::edge_event_ratios(make_stream(10, 10, 0, 1000, ev), b);
  EXPECT_DOUBLE_EQ(r.edge_pixel_ratio, 0.20);
  EXPECT_DOUBLE_EQ(r.edge_event_ratio, 0.37);
  EXPECT_THROW(events::edge_event_ratios(make_stream(10, 9, 0, 1000, {}), b), InputError);
}

TEST(Correlation, DeterministicPerSeed) {
  std::vector<events::LabeledStream> samples{{random_stream(16, 16, 80, 2), test::random_mask(16, 16, 3, 2)}};
  const auto a = events::correlation_experiment(samples, 10, 5);
  const auto b = events::correlation_experiment(samples, 10, 5);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].dilation_iters, b[0].dilation_iters);
  EXPECT_EQ(a[0].edge_event_ratio, b[0].edge_event_ratio);
  EXPECT_THROW(events::correlation_experiment({}, 10, 5), InputError);
}

TEST(Correlation, EventsOnlyOnEdgesGiveRatioOne) {
  SemanticMask m(20, 20, 1);
  for (int y = 5; y < 15; ++y) {
    for (int x = 5; x < 15; ++x) m.at(y, x) = 2;
  }
  const BoundaryMap b = events::extract_boundary(m);
  std::vector<EventRecord> ev;
  int t = 1;
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) {
      if (b.at(y, x)) ev.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t++, 1});
    }
  }
  std::vector<events::LabeledStream> samples{{make_stream(20, 20, 0, t, ev), m}};
  for (const auto& lvl : events::correlation_sweep(samples, 10)) EXPECT_DOUBLE_EQ(lvl.edge_event_ratio, 1.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_DOUBLE_EQ(events::correlation_experiment(samples, 10, seed)[0].edge_event_ratio, 1.0);
  }
}
