#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "cdnas/graph.hpp"
#include "cdnas/metrics.hpp"

using namespace cdnas;

namespace {

DomainSpec spec_ab() {
  DomainSpec s;
  s.target = "A";
  s.sources = {"B"};
  return s;
}

Interaction rec(std::string u, std::string i, std::string d, int label = 1,
                Split split = Split::train) {
  return Interaction{std::move(u), std::move(i), std::move(d), label, split};
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build_graph basics") {
  SUBCASE("empty input yields an empty graph") {
    auto g = InteractionGraph::build({}, spec_ab());
    CHECK(g.n_users() == 0);
    CHECK(g.n_items() == 0);
    CHECK(g.n_edges() == 0);
    CHECK(g.n_domains() == 2);
  }
  SUBCASE("three interactions over two users and two items") {
    auto g = InteractionGraph::build(
        {rec("u1", "i1", "A"), rec("u2", "i2", "B"), rec("u1", "i2", "B")}, spec_ab());
    CHECK(g.n_users() == 2);
    CHECK(g.n_items() == 2);
    CHECK(g.n_edges() == 3);
  }
  SUBCASE("node index maps are stable under input order") {
    auto g = InteractionGraph::build(
        {rec("zed", "i9", "A"), rec("abe", "i1", "B"), rec("zed", "i1", "B")}, spec_ab());
    CHECK(g.user_index("zed") == 0);
    CHECK(g.user_index("abe") == 1);
    CHECK(g.item_index("i9") == 0);
    CHECK(g.item_index("i1") == 1);
  }
  SUBCASE("unknown domain is rejected with the offending record") {
    CHECK_THROWS_WITH_AS(InteractionGraph::build({rec("u1", "i1", "C")}, spec_ab()),
                         doctest::Contains("C"), std::invalid_argument);
  }
  SUBCASE("duplicate (user, item, domain, split) is rejected") {
    CHECK_THROWS_AS(InteractionGraph::build({rec("u1", "i1", "A"), rec("u1", "i1", "A")},
                                            spec_ab()),
                    std::invalid_argument);
  }
  SUBCASE("same pair in different splits is allowed") {
    auto g = InteractionGraph::build(
        {rec("u1", "i1", "A", 1, Split::train), rec("u1", "i1", "A", 1, Split::valid)}, spec_ab());
    CHECK(g.n_edges() == 2);
  }
  SUBCASE("an item cannot move between domains") {
    CHECK_THROWS_WITH_AS(
        InteractionGraph::build({rec("u1", "i1", "A"), rec("u2", "i1", "B")}, spec_ab()),
        doctest::Contains("more than one domain"), std::invalid_argument);
  }
  SUBCASE("non-binary label is rejected") {
    CHECK_THROWS_AS(InteractionGraph::build({rec("u1", "i1", "A", 2)}, spec_ab()),
                    std::invalid_argument);
  }
}

TEST_CASE("domain spec validation") {
  DomainSpec bad;
  bad.target = "A";
  bad.sources = {"A"};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  DomainSpec dup;
  dup.target = "A";
  dup.sources = {"B", "B"};
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
}

TEST_CASE("density reproduces published per-domain statistics") {
  // (users, items, interactions, density %) pairs from the reference
  // cross-domain dataset statistics table
  struct Row {
    long long users, items, edges;
    double density;
  };
  const Row rows[] = {
      {37387, 49273, 792314, 0.043},  {37387, 236530, 945028, 0.011},
      {16738, 150190, 418603, 0.017}, {16738, 61201, 380675, 0.037},
      {28506, 203698, 735192, 0.013}, {28506, 52134, 364267, 0.025},
      {7576, 117771, 317503, 0.036},  {7576, 11567, 84564, 0.096},
      {1390, 17707, 27128, 0.110},    {1390, 8074, 12312, 0.110},
      {2809, 28253, 53995, 0.068},    {2809, 14274, 37559, 0.094},
      {8235, 31484, 99594, 0.038},    {8235, 18703, 66470, 0.043},
  };
  for (const auto& r : rows) {
    CHECK(std::abs(density_percent(r.edges, r.users, r.items) - r.density) < 0.001);
  }
  // density on a tiny built graph: 792314/(37387*49273) scaled down
  auto g = InteractionGraph::build({rec("u1", "i1", "A"), rec("u2", "i1", "A"),
                                    rec("u1", "i2", "B")},
                                   spec_ab());
  CHECK(g.density_percent(0) == doctest::Approx(100.0 * 2 / (2.0 * 1)));
}

TEST_CASE("ingest_tsv") {
  SUBCASE("well-formed file with header") {
    const auto path = temp_file("cdnas_ok.tsv");
    std::ofstream(path) << "user_id\titem_id\tdomain\tlabel\tsplit\n"
                        << "u1\ti1\tA\t1\ttrain\n"
                        << "u2\ti2\tB\t0\tvalid\n"
                        << "u3\ti3\tA\t1\ttest\n";
    auto rs = ingest_tsv(path);
    REQUIRE(rs.size() == 3);
    CHECK(rs[0].user == "u1");
    CHECK(rs[1].label == 0);
    CHECK(rs[1].split == Split::valid);
    CHECK(rs[2].split == Split::test);
    std::remove(path.c_str());
  }
  SUBCASE("missing split column defaults to train") {
    const auto path = temp_file("cdnas_nosplit.tsv");
    std::ofstream(path) << "u1\ti1\tA\t1\n";
    auto rs = ingest_tsv(path);
    REQUIRE(rs.size() == 1);
    CHECK(rs[0].split == Split::train);
    std::remove(path.c_str());
  }
  SUBCASE("non-binary label cites the line number") {
    const auto path = temp_file("cdnas_badlabel.tsv");
    std::ofstream(path) << "user_id\titem_id\tdomain\tlabel\tsplit\n"
                        << "u1\ti1\tA\t1\ttrain\n"
                        << "u2\ti2\tA\t1\ttrain\n"
                        << "u3\ti3\tA\t1\ttrain\n"
                        << "u4\ti4\tA\t2\ttrain\n";
    CHECK_THROWS_WITH_AS(ingest_tsv(path), doctest::Contains("line 5"), std::runtime_error);
    std::remove(path.c_str());
  }
  SUBCASE("malformed line cites the line number") {
    const auto path = temp_file("cdnas_malformed.tsv");
    std::ofstream(path) << "u1\ti1\n";
    CHECK_THROWS_WITH_AS(ingest_tsv(path), doctest::Contains("line 1"), std::runtime_error);
    std::remove(path.c_str());
  }
  SUBCASE("empty file yields an empty list") {
    const auto path = temp_file("cdnas_empty.tsv");
    std::ofstream(path).close();
    CHECK(ingest_tsv(path).empty());
    std::remove(path.c_str());
  }
  SUBCASE("missing file raises") {
    CHECK_THROWS_AS(ingest_tsv("/nonexistent/nope.tsv"), std::runtime_error);
  }
  SUBCASE("write then ingest round-trips") {
    const auto path = temp_file("cdnas_round.tsv");
    std::vector<Interaction> rs = {rec("u1", "i1", "A", 1, Split::train),
                                   rec("u2", "i2", "B", 0, Split::test)};
    write_tsv(path, rs);
    auto back = ingest_tsv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].item == "i2");
    CHECK(back[1].split == Split::test);
    std::remove(path.c_str());
  }
}

TEST_CASE("negative sampling") {
  // 2 users x 5 items in domain A, user u0 clicked i0,i1; u1 clicked i2
  std::vector<Interaction> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(rec("holder", "i" + std::to_string(i), "A", 1,
                                                 Split::valid));  // declare items
  recs.push_back(rec("u0", "i0", "A"));
  recs.push_back(rec("u0", "i1", "A"));
  recs.push_back(rec("u1", "i2", "A"));
  DomainSpec s;
  s.target = "A";
  auto g = InteractionGraph::build(recs, s);

  SUBCASE("ratio 1.0 emits one negative per train positive, no collisions") {
    Rng rng(5);
    auto negs = negative_sample(g, 1.0, rng);
    CHECK(negs.size() == 3);
    for (const auto& n : negs) {
      CHECK(n.label == 0);
      CHECK(n.split == Split::train);
      const int u = g.user_index(n.user);
      const int i = g.item_index(n.item);
      CHECK_FALSE(g.is_positive(u, i));
    }
  }
  SUBCASE("ratio 0.5 emits half as many") {
    std::vector<Interaction> many;
    for (int i = 0; i < 20; ++i)
      many.push_back(rec("holder", "x" + std::to_string(i), "A", 1, Split::valid));
    for (int i = 0; i < 10; ++i) many.push_back(rec("u" + std::to_string(i), "x0", "A"));
    // u0..u9 all clicked x0? that's 10 distinct users, fine
    auto g2 = InteractionGraph::build(many, s);
    Rng rng(5);
    CHECK(negative_sample(g2, 0.5, rng).size() == 5);
  }
  SUBCASE("same seed reproduces the same negatives") {
    Rng r1(99), r2(99);
    auto a = negative_sample(g, 1.0, r1);
    auto b = negative_sample(g, 1.0, r2);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].user == b[i].user);
      CHECK(a[i].item == b[i].item);
    }
  }
  SUBCASE("a user with every item positive is skipped") {
    std::vector<Interaction> full;
    full.push_back(rec("u0", "i0", "A"));
    full.push_back(rec("u0", "i1", "A"));
    DomainSpec only;
    only.target = "A";
    auto g2 = InteractionGraph::build(full, only);  // u0 clicked both items of A
    Rng rng(1);
    auto negs = negative_sample(g2, 1.0, rng);
    CHECK(negs.empty());
  }
  SUBCASE("negatives for an evaluation split use that split's positives") {
    Rng rng(3);
    std::vector<Interaction> recs2 = recs;
    recs2.push_back(rec("u0", "i3", "A", 1, Split::valid));
    auto g2 = InteractionGraph::build(recs2, s);
    auto negs = negative_sample_for_split(g2, Split::valid, 1.0, rng);
    // the holder user owns every item, so its 5 valid positives are skipped;
    // u0's one valid positive draws one negative among its free items
    REQUIRE(negs.size() == 1);
    CHECK(negs[0].split == Split::valid);
    CHECK(negs[0].user == "u0");
    CHECK((negs[0].item == "i2" || negs[0].item == "i4"));
  }
}

TEST_CASE("make_splits") {
  SUBCASE("counts approximate the ratios with per-group stratification") {
    std::vector<Interaction> recs;
    for (int u = 0; u < 100; ++u)
      for (int k = 0; k < 10; ++k)
        recs.push_back(rec("u" + std::to_string(u), "i" + std::to_string(u * 10 + k), "A"));
    auto out = make_splits(recs, {0.8, 0.1, 0.1}, 7);
    int train = 0, valid = 0, test = 0;
    for (const auto& r : out) {
      if (r.split == Split::train) ++train;
      if (r.split == Split::valid) ++valid;
      if (r.split == Split::test) ++test;
    }
    CHECK(train == 800);
    CHECK(valid == 100);
    CHECK(test == 100);
  }
  SUBCASE("zero or non-summing ratios are rejected") {
    CHECK_THROWS_AS(make_splits({rec("u", "i", "A")}, {1.0, 0.0, 0.0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_splits({rec("u", "i", "A")}, {0.8, 0.1, 0.2}, 1), std::invalid_argument);
  }
  SUBCASE("same seed reproduces the assignment") {
    std::vector<Interaction> recs;
    for (int k = 0; k < 50; ++k) recs.push_back(rec("u", "i" + std::to_string(k), "A"));
    auto a = make_splits(recs, {0.6, 0.2, 0.2}, 42);
    auto b = make_splits(recs, {0.6, 0.2, 0.2}, 42);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].split == b[i].split);
  }
  SUBCASE("a user with three or more positives lands in every split") {
    std::vector<Interaction> recs;
    for (int k = 0; k < 3; ++k) recs.push_back(rec("u", "i" + std::to_string(k), "A"));
    auto out = make_splits(recs, {0.8, 0.1, 0.1}, 3);
    std::set<Split> seen;
    for (const auto& r : out) seen.insert(r.split);
    CHECK(seen.size() == 3);
  }
}

TEST_CASE("synthetic generation") {
  SUBCASE("positive count arithmetic") {
    SynthConfig cfg;
    cfg.n_users = 100;
    cfg.n_domains = 2;
    cfg.positives_per_user = 20;
    cfg.n_items_per_domain = 60;
    cfg.seed = 11;
    auto res = synth_generate(cfg);
    size_t positives = 0;
    for (const auto& r : res.interactions) positives += r.label;
    CHECK(positives == 100 * 20 * 2);
    // each clicked impression pairs with an unclicked one at this item budget
    CHECK(res.interactions.size() == 2 * positives);
    CHECK(res.oracle_scores.size() == res.interactions.size());
  }
  SUBCASE("separable data: oracle scorer achieves high AUC on emitted test pairs") {
    SynthConfig cfg;
    cfg.n_users = 100;
    cfg.n_domains = 2;
    cfg.n_items_per_domain = 100;
    cfg.positives_per_user = 20;
    cfg.shared_factor_strength = 1.0;
    cfg.source_noise_fraction = 0.0;
    cfg.seed = 4;
    auto res = synth_generate(cfg);
    auto tagged = make_splits(res.interactions, {0.8, 0.1, 0.1}, 9);
    auto g = InteractionGraph::build(tagged, res.spec);
    Rng rng(13);
    auto negs = negative_sample_for_split(g, Split::test, 1.0, rng);

    std::vector<double> scores;
    std::vector<int> labels;
    auto add_pair = [&](const Interaction& r) {
      const int d = g.domain_index(r.domain);
      const int local = std::stoi(r.item.substr(r.item.find("_i") + 2));
      scores.push_back(res.preference_score(std::stoi(r.user.substr(1)), d, local, d));
      labels.push_back(r.label);
    };
    for (const auto& r : tagged)
      if (r.split == Split::test) add_pair(r);
    for (const auto& r : negs) add_pair(r);
    CHECK(auc(scores, labels) > 0.95);
  }
  SUBCASE("independent factors: source-only oracle is uninformative on the target") {
    SynthConfig cfg;
    cfg.n_users = 100;
    cfg.n_domains = 2;
    cfg.n_items_per_domain = 100;
    cfg.positives_per_user = 20;
    cfg.shared_factor_strength = 0.0;
    cfg.seed = 21;
    auto res = synth_generate(cfg);
    auto tagged = make_splits(res.interactions, {0.8, 0.1, 0.1}, 9);
    auto g = InteractionGraph::build(tagged, res.spec);
    Rng rng(13);
    auto negs = negative_sample_for_split(g, Split::test, 1.0, rng);

    std::vector<double> scores;
    std::vector<int> labels;
    auto add_pair = [&](const Interaction& r) {
      if (r.domain != "d0") return;  // target pairs only
      const int local = std::stoi(r.item.substr(r.item.find("_i") + 2));
      // score with the source-domain user factors (domain 1)
      scores.push_back(res.preference_score(std::stoi(r.user.substr(1)), 0, local, 1));
      labels.push_back(r.label);
    };
    for (const auto& r : tagged)
      if (r.split == Split::test) add_pair(r);
    for (const auto& r : negs) add_pair(r);
    CHECK(auc(scores, labels) == doctest::Approx(0.5).epsilon(0.1));
  }
  SUBCASE("same seed gives identical data") {
    SynthConfig cfg;
    cfg.seed = 31;
    cfg.n_users = 10;
    cfg.n_items_per_domain = 30;
    cfg.positives_per_user = 5;
    auto a = synth_generate(cfg);
    auto b = synth_generate(cfg);
    REQUIRE(a.interactions.size() == b.interactions.size());
    for (size_t i = 0; i < a.interactions.size(); ++i) {
      CHECK(a.interactions[i].item == b.interactions[i].item);
      CHECK(a.interactions[i].label == b.interactions[i].label);
    }
  }
  SUBCASE("full source noise flips exactly the source labels") {
    SynthConfig cfg;
    cfg.seed = 37;
    cfg.n_users = 12;
    cfg.n_items_per_domain = 24;
    cfg.positives_per_user = 5;
    cfg.n_domains = 2;
    auto clean = synth_generate(cfg);
    cfg.source_noise_fraction = 1.0;
    auto noisy = synth_generate(cfg);
    REQUIRE(clean.interactions.size() == noisy.interactions.size());
    for (size_t i = 0; i < clean.interactions.size(); ++i) {
      const auto& a = clean.interactions[i];
      const auto& b = noisy.interactions[i];
      CHECK(a.item == b.item);
      if (a.domain == "d0")
        CHECK(a.label == b.label);  // target untouched
      else
        CHECK(b.label == 1 - a.label);  // every source label flipped
    }
  }
  SUBCASE("partial noise flips the stated fraction of source edges") {
    SynthConfig cfg;
    cfg.seed = 41;
    cfg.n_users = 20;
    cfg.n_items_per_domain = 30;
    cfg.positives_per_user = 6;
    cfg.n_domains = 2;
    auto clean = synth_generate(cfg);
    cfg.source_noise_fraction = 0.5;
    auto noisy = synth_generate(cfg);
    size_t flipped = 0, source = 0;
    for (size_t i = 0; i < clean.interactions.size(); ++i) {
      if (clean.interactions[i].domain == "d0") continue;
      ++source;
      flipped += clean.interactions[i].label != noisy.interactions[i].label;
    }
    CHECK(flipped == source / 2);
  }
  SUBCASE("invalid configs are rejected") {
    SynthConfig cfg;
    cfg.positives_per_user = 200;
    cfg.n_items_per_domain = 100;
    CHECK_THROWS_AS(synth_generate(cfg), std::invalid_argument);
    SynthConfig neg;
    neg.source_noise_fraction = 1.5;
    CHECK_THROWS_AS(synth_generate(neg), std::invalid_argument);
  }
}

TEST_CASE("disjoint batch sampling") {
  std::vector<Interaction> pool;
  for (int i = 0; i < 100; ++i)
    pool.push_back(rec("u" + std::to_string(i % 10), "i" + std::to_string(i),
                       i % 2 == 0 ? "A" : "B"));

  SUBCASE("batches are disjoint and dev is target-only, over many draws") {
    Rng rng(77);
    for (int rep = 0; rep < 1000; ++rep) {
      auto [inner, dev] = sample_disjoint_batches(pool, 20, "A", rng);
      REQUIRE(inner.size() == 20);
      REQUIRE(dev.size() == 20);
      std::set<std::string> seen;
      for (const auto& r : inner) seen.insert(r.user + "|" + r.item);
      for (const auto& r : dev) {
        CHECK(r.domain == "A");
        CHECK(seen.count(r.user + "|" + r.item) == 0);
      }
    }
  }
  SUBCASE("pool too small raises") {
    std::vector<Interaction> tiny(pool.begin(), pool.begin() + 10);
    Rng rng(1);
    CHECK_THROWS_AS(sample_disjoint_batches(tiny, 32, "A", rng), std::invalid_argument);
  }
  SUBCASE("same seed gives the same pair of batches") {
    Rng r1(123), r2(123);
    auto a = sample_disjoint_batches(pool, 15, "A", r1);
    auto b = sample_disjoint_batches(pool, 15, "A", r2);
    for (size_t i = 0; i < a.first.size(); ++i) CHECK(a.first[i].item == b.first[i].item);
    for (size_t i = 0; i < a.second.size(); ++i) CHECK(a.second[i].item == b.second[i].item);
  }
}

TEST_CASE("ablation filter") {
  std::vector<Interaction> recs;
  for (int i = 0; i < 3; ++i) recs.push_back(rec("u" + std::to_string(i), "a" + std::to_string(i), "A"));
  for (int i = 0; i < 5; ++i) recs.push_back(rec("u" + std::to_string(i % 3), "b" + std::to_string(i), "B"));
  auto g = InteractionGraph::build(recs, spec_ab());

  SUBCASE("NO_SOURCE keeps only target edges and items") {
    auto f = apply_ablation_filter(g, GraphFilter::NO_SOURCE);
    CHECK(f.n_edges() == 3);
    CHECK(f.n_items() == 3);
    CHECK(f.n_domains() == 1);
    for (int i = 0; i < f.n_items(); ++i) CHECK(f.item_id(i)[0] == 'a');
  }
  SUBCASE("FULL is the identity") {
    auto f = apply_ablation_filter(g, GraphFilter::FULL);
    CHECK(f.n_edges() == g.n_edges());
    CHECK(f.n_items() == g.n_items());
    CHECK(f.n_users() == g.n_users());
  }
}

TEST_CASE("bipartite structure and propagation caches") {
  auto g = InteractionGraph::build(
      {rec("u0", "i0", "A", 1, Split::train), rec("u0", "i1", "B", 1, Split::train),
       rec("u1", "i0", "A", 0, Split::train), rec("u1", "i1", "B", 1, Split::valid)},
      spec_ab());
  // every edge joins a user index and an item index by construction
  for (const auto& e : g.edges()) {
    CHECK(e.user >= 0);
    CHECK(e.user < g.n_users());
    CHECK(e.item >= 0);
    CHECK(e.item < g.n_items());
  }
  // propagation edges: train-split clicks only
  CHECK(g.train_clicks(0).size() == 1);  // u0-i0 (label-0 and valid edges excluded)
  CHECK(g.train_clicks(1).size() == 1);  // u0-i1
  CHECK(g.train_clicks_all().size() == 2);
}
