#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "epipre/clustering.hpp"
#include "support.hpp"

using namespace epipre;

namespace {

using Partition = std::set<std::vector<std::uint32_t>>;

FeatureSet fixed_set(std::vector<Descriptor> ds) {
  std::vector<Feature> f;
  for (auto& d : ds) f.push_back(testutil::feature(0, 0, 1, 0, std::move(d)));
  return testutil::feature_set(std::move(f), OrientationMode::kFixed, 0.0);
}

Descriptor perturbed(const Descriptor& base, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  Descriptor d(base);
  for (auto& v : d) v += g(rng);
  double n = 0.0;
  for (double v : d) n += v * v;
  for (auto& v : d) v /= std::sqrt(n);
  return d;
}

Partition partition_of(const std::vector<Cluster>& cs) {
  Partition p;
  for (const auto& c : cs) p.insert(c.members);
  return p;
}

// Sorting-based median, independent of the library's nth_element version.
Descriptor naive_median(const FeatureSet& f, const std::vector<std::uint32_t>& members) {
  Descriptor rep;
  for (std::size_t d = 0; d < f.descriptor_dim(); ++d) {
    std::vector<double> col;
    for (auto m : members) col.push_back(f[m].descriptor[d]);
    std::sort(col.begin(), col.end());
    const std::size_t n = col.size();
    rep.push_back(n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]));
  }
  double s = 0.0;
  for (double v : rep) s += v * v;
  for (auto& v : rep) v /= std::sqrt(s);
  return rep;
}

// Textbook agglomeration: rescan every pair after every merge.
Partition naive_agglomerate(const FeatureSet& f, double stop) {
  std::vector<std::vector<std::uint32_t>> cl;
  std::vector<Descriptor> rep;
  for (std::uint32_t i = 0; i < f.size(); ++i) {
    cl.push_back({i});
    rep.push_back(f[i].descriptor);
  }
  while (cl.size() > 1) {
    double best = -2.0;
    std::size_t a = 0, b = 0;
    for (std::size_t i = 0; i < cl.size(); ++i) {
      for (std::size_t j = i + 1; j < cl.size(); ++j) {
        const double s = testutil::dot(rep[i], rep[j]);
        if (s > best) best = s, a = i, b = j;
      }
    }
    if (best < stop) break;
    cl[a].insert(cl[a].end(), cl[b].begin(), cl[b].end());
    std::sort(cl[a].begin(), cl[a].end());
    rep[a] = naive_median(f, cl[a]);
    cl.erase(cl.begin() + static_cast<long>(b));
    rep.erase(rep.begin() + static_cast<long>(b));
  }
  return Partition(cl.begin(), cl.end());
}

// Connected components of the graph with edges where similarity >= stop.
Partition components(const FeatureSet& f, double stop) {
  std::vector<std::uint32_t> parent(f.size());
  for (std::uint32_t i = 0; i < f.size(); ++i) parent[i] = i;
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) x = parent[x];
    return x;
  };
  for (std::uint32_t i = 0; i < f.size(); ++i)
    for (std::uint32_t j = i + 1; j < f.size(); ++j)
      if (testutil::dot(f[i].descriptor, f[j].descriptor) >= stop) parent[find(j)] = find(i);
  std::map<std::uint32_t, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < f.size(); ++i) groups[find(i)].push_back(i);
  Partition p;
  for (auto& [r, g] : groups) p.insert(g);
  return p;
}

Cluster make_cluster(std::vector<std::uint32_t> members, Descriptor rep) {
  return Cluster{std::move(members), std::move(rep)};
}

}  // namespace

TEST(Agglomerative, DissimilarDescriptorsStaySingletons) {
  std::vector<Descriptor> ds;
  for (int i = 0; i < 16; ++i) {
    Descriptor d(16, 0.0);
    d[i] = 1.0;
    ds.push_back(d);
  }
  const auto cs = agglomerative_cluster(fixed_set(ds));
  ASSERT_EQ(cs.size(), 16u);
  for (std::uint32_t i = 0; i < 16; ++i) EXPECT_EQ(cs[i].members, std::vector<std::uint32_t>{i});
}

TEST(Agglomerative, ExactCopiesFormOneCluster) {
  std::mt19937_64 rng(1);
  const auto d = testutil::random_descriptor(32, rng);
  const auto cs = agglomerative_cluster(fixed_set(std::vector<Descriptor>(7, d)));
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].members.size(), 7u);
  EXPECT_NEAR(testutil::dot(cs[0].representative, d), 1.0, 1e-12);
}

TEST(Agglomerative, ThreePrototypesOfTenAgreeWithComponents) {
  std::mt19937_64 rng(2);
  std::vector<Descriptor> protos, ds;
  for (int p = 0; p < 3; ++p) protos.push_back(testutil::random_descriptor(64, rng));
  for (int i = 0; i < 10; ++i)
    for (int p = 0; p < 3; ++p) ds.push_back(perturbed(protos[p], 0.03, rng));
  const auto f = fixed_set(ds);
  const auto got = partition_of(agglomerative_cluster(f));
  ASSERT_EQ(got.size(), 3u);
  for (const auto& c : got) EXPECT_EQ(c.size(), 10u);
  EXPECT_EQ(got, components(f, 0.85));
}

TEST(Agglomerative, AgreesWithTextbookAgglomeration) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 30; ++t) {
    std::vector<Descriptor> protos, ds;
    for (int p = 0; p < 6; ++p) protos.push_back(testutil::random_descriptor(24, rng));
    std::uniform_int_distribution<int> pick(0, 5);
    std::uniform_real_distribution<double> sigma(0.02, 0.12);
    for (int i = 0; i < 60; ++i) ds.push_back(perturbed(protos[pick(rng)], sigma(rng), rng));
    const auto f = fixed_set(ds);
    EXPECT_EQ(partition_of(agglomerative_cluster(f)), naive_agglomerate(f, 0.85)) << "trial " << t;
  }
}

TEST(Agglomerative, OutputIsAPartitionOrderedByFirstMember) {
  std::mt19937_64 rng(4);
  std::vector<Descriptor> ds;
  const auto base = testutil::random_descriptor(16, rng);
  for (int i = 0; i < 80; ++i) ds.push_back(i % 3 ? testutil::random_descriptor(16, rng) : perturbed(base, 0.05, rng));
  const auto cs = agglomerative_cluster(fixed_set(ds));
  std::vector<int> seen(80, 0);
  for (std::size_t c = 0; c < cs.size(); ++c) {
    ASSERT_FALSE(cs[c].members.empty());
    EXPECT_TRUE(std::is_sorted(cs[c].members.begin(), cs[c].members.end()));
    if (c > 0) {
      EXPECT_LT(cs[c - 1].members.front(), cs[c].members.front());
    }
    for (auto m : cs[c].members) ++seen[m];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Agglomerative, NaturalOrientationIsRejected) {
  auto f = fixed_set({{1.0, 0.0}});
  f.mode = OrientationMode::kNatural;
  EXPECT_THROW(agglomerative_cluster(f), ModeError);
}

TEST(Agglomerative, TiesMergeLowestPairFirst) {
  // Two pairs of exact copies tie at similarity 1; the groups stay apart.
  const auto f = fixed_set({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}});
  const auto cs = agglomerative_cluster(f);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].members, (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(cs[1].members, (std::vector<std::uint32_t>{2, 3}));
}

TEST(MedianDescriptor, EvenSizeUsesMidpoint) {
  const auto f = fixed_set({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {0.6, 0.8, 0.0}});
  const auto rep = median_descriptor(f, {0, 1, 2, 3});
  EXPECT_EQ(rep, naive_median(f, {0, 1, 2, 3}));
  // Column medians: (0.3, 0.4, 0) before normalization.
  EXPECT_NEAR(rep[0], 0.6, 1e-15);
  EXPECT_NEAR(rep[1], 0.8, 1e-15);
  EXPECT_EQ(rep[2], 0.0);
}

TEST(MatchClusters, IdenticalSetsPairIdentically) {
  std::mt19937_64 rng(5);
  std::vector<Cluster> cs;
  for (std::uint32_t i = 0; i < 12; ++i) cs.push_back(make_cluster({i}, testutil::random_descriptor(32, rng)));
  const auto p = match_clusters(cs, cs);
  ASSERT_EQ(p.pairs.size(), 12u);
  for (std::uint32_t i = 0; i < 12; ++i) {
    EXPECT_EQ(p.pairs[i].c1, i);
    EXPECT_EQ(p.pairs[i].c2, i);
    EXPECT_EQ(p.pairs[i].directions, kForward | kBackward);
  }
}

TEST(MatchClusters, OverSegmentedClustersBothPairWithTheirTarget) {
  // Image 1 splits one structure into G and Y; image 2 has it whole as R,
  // plus an unrelated cluster.
  const auto g = make_cluster({0, 1}, {0.8, 0.6, 0.0});
  const auto y = make_cluster({2}, {0.6, 0.8, 0.0});
  const auto r = make_cluster({0, 1, 2}, {0.7071067811865476, 0.7071067811865476, 0.0});
  const auto other = make_cluster({3}, {0.0, 0.0, 1.0});
  const auto p = match_clusters({g, y}, {r, other});
  std::set<std::pair<std::uint32_t, std::uint32_t>> keys;
  for (const auto& pr : p.pairs) keys.insert({pr.c1, pr.c2});
  EXPECT_TRUE(keys.count({0, 0}));
  EXPECT_TRUE(keys.count({1, 0}));
}

TEST(MatchClusters, AgreesWithExhaustiveScan) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    std::vector<Cluster> a, b;
    for (std::uint32_t i = 0; i < 25; ++i) a.push_back(make_cluster({i}, testutil::random_descriptor(8, rng)));
    for (std::uint32_t i = 0; i < 18; ++i) b.push_back(make_cluster({i}, testutil::random_descriptor(8, rng)));
    auto argmax = [](const Descriptor& q, const std::vector<Cluster>& cs) {
      std::uint32_t arg = 0;
      for (std::uint32_t j = 1; j < cs.size(); ++j)
        if (testutil::dot(q, cs[j].representative) > testutil::dot(q, cs[arg].representative)) arg = j;
      return arg;
    };
    std::set<std::pair<std::uint32_t, std::uint32_t>> oracle, got;
    for (std::uint32_t i = 0; i < a.size(); ++i) oracle.insert({i, argmax(a[i].representative, b)});
    for (std::uint32_t j = 0; j < b.size(); ++j) oracle.insert({argmax(b[j].representative, a), j});
    for (const auto& pr : match_clusters(a, b).pairs) got.insert({pr.c1, pr.c2});
    EXPECT_EQ(got, oracle);
  }
}

TEST(ExpandToMatches, CartesianProducts) {
  const std::vector<Cluster> c1{make_cluster({4}, {1.0}), make_cluster({0, 7}, {1.0})};
  const std::vector<Cluster> c2{make_cluster({2}, {1.0}), make_cluster({1, 5, 9}, {1.0})};
  ClusterPairing single{{{0, 0, kForward}}};
  const auto one = expand_to_matches(single, c1, c2);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].key(), IndexPair(4, 2));
  EXPECT_EQ(one[0].sources, kInX);
  EXPECT_FALSE(one[0].d_r.has_value());

  ClusterPairing prod{{{1, 1, kForward}}};
  const auto six = expand_to_matches(prod, c1, c2);
  const std::vector<IndexPair> want{{0, 1}, {0, 5}, {0, 9}, {7, 1}, {7, 5}, {7, 9}};
  ASSERT_EQ(six.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(six[i].key(), want[i]);
}

TEST(ExpandToMatches, DuplicatePairsAreMerged) {
  const std::vector<Cluster> c1{make_cluster({0, 1}, {1.0})};
  const std::vector<Cluster> c2{make_cluster({0}, {1.0})};
  ClusterPairing p{{{0, 0, kForward}, {0, 0, kBackward}}};
  EXPECT_EQ(expand_to_matches(p, c1, c2).size(), 2u);
}

TEST(ExpandToMatches, LoweRejectedFeatureGainsCorrectCandidate) {
  // One window in image 1; two identical windows in image 2. The ratio test
  // drops it, clustering yields the (1 x 2) pair with the true match inside.
  const Descriptor w{0.6, 0.8, 0.0};
  std::vector<Feature> a{testutil::feature(100, 100, 2, 0, w)};
  std::vector<Feature> b{testutil::feature(110, 100, 2, 0, w), testutil::feature(300, 100, 2, 0, w),
                         testutil::feature(50, 50, 2, 0, {0.0, 0.0, 1.0})};
  const auto f1 = testutil::feature_set(a, OrientationMode::kFixed);
  const auto f2 = testutil::feature_set(b, OrientationMode::kFixed);
  const auto c1 = agglomerative_cluster(f1), c2 = agglomerative_cluster(f2);
  const auto x = expand_to_matches(match_clusters(c1, c2), c1, c2);
  std::set<IndexPair> keys;
  for (const auto& m : x) keys.insert(m.key());
  EXPECT_TRUE(keys.count({0, 0}));
  EXPECT_TRUE(keys.count({0, 1}));
  EXPECT_EQ(c2.size(), 2u);
}

TEST(ExpandToMatches, SizeBoundOnRandomInstances) {
  std::mt19937_64 rng(7);
  std::vector<Descriptor> protos;
  for (int p = 0; p < 4; ++p) protos.push_back(testutil::random_descriptor(16, rng));
  std::vector<Descriptor> d1, d2;
  for (int i = 0; i < 30; ++i) d1.push_back(perturbed(protos[i % 4], 0.04, rng));
  for (int i = 0; i < 25; ++i) d2.push_back(perturbed(protos[(i + 1) % 4], 0.04, rng));
  const auto f1 = fixed_set(d1), f2 = fixed_set(d2);
  const auto c1 = agglomerative_cluster(f1), c2 = agglomerative_cluster(f2);
  const auto pairing = match_clusters(c1, c2);
  const auto x = expand_to_matches(pairing, c1, c2);
  std::set<IndexPair> oracle;
  for (const auto& p : pairing.pairs)
    for (auto m1 : c1[p.c1].members)
      for (auto m2 : c2[p.c2].members) oracle.insert({m1, m2});
  EXPECT_GE(x.size(), pairing.pairs.size());
  std::set<IndexPair> got;
  for (const auto& m : x) got.insert(m.key());
  EXPECT_EQ(got, oracle);
  EXPECT_EQ(got.size(), x.size());
}
