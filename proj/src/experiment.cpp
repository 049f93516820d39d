#include "cdnas/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace cdnas {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

std::array<double, 3> parse_ratios(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("config: " + where + " must be an array of three ratios");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json mixtures_to_json(const Eigen::MatrixXd& probs, const std::vector<std::string>& domains) {
  json arr = json::array();
  const int n_domains = static_cast<int>(domains.size());
  for (int layer = 0; layer < 2; ++layer)
    for (int d = 0; d < n_domains; ++d) {
      json row;
      row["layer"] = layer;
      row["domain"] = domains[d];
      json w;
      for (OpKind op : all_ops())
        w[op_name(op)] = probs(layer * n_domains + d, static_cast<int>(op));
      row["weights"] = w;
      arr.push_back(row);
    }
  return arr;
}

json final_record(const RunOutcome& r, uint64_t cfg_hash) {
  json rec;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(cfg_hash));
  rec["run_id"] = std::string(buf) + "-" + r.variant + "-s" + std::to_string(r.seed);
  rec["seed"] = r.seed;
  rec["variant"] = r.variant;
  rec["auc"] = r.test.auc;
  rec["logloss"] = r.test.logloss;
  rec["gamma_domains"] = r.gamma_domains;
  rec["arch_mixtures"] = mixtures_to_json(r.arch_mixtures, r.domain_names);
  return rec;
}

json pv_to_json(const ParamVector<double>& p) {
  json groups = json::array();
  for (const auto& g : p.layout->groups()) {
    json e;
    e["name"] = g.name;
    e["rows"] = g.rows;
    e["cols"] = g.cols;
    groups.push_back(e);
  }
  std::vector<double> vals(p.values.data(), p.values.data() + p.values.size());
  return json{{"groups", groups}, {"values", vals}};
}

ParamVector<double> pv_from_json(const json& j) {
  auto layout = std::make_shared<Layout>();
  for (const auto& g : j.at("groups"))
    layout->add(g.at("name").get<std::string>(), g.at("rows").get<Eigen::Index>(),
                g.at("cols").get<Eigen::Index>());
  ParamVector<double> p{LayoutPtr(layout)};
  const auto vals = j.at("values").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(vals.size()) != p.size())
    throw std::runtime_error("checkpoint: value count does not match the layout");
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values[i] = vals[i];
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

template <typename S>
RunOutcome run_single_impl(const ExperimentConfig& cfg, const InteractionGraph& graph,
                           uint64_t seed) {
  BilevelConfig bcfg = cfg.bilevel;
  bcfg.seed = seed;
  Trainer<S> trainer(graph, cfg.model, bcfg, cfg.variant);
  const auto t0 = std::chrono::steady_clock::now();
  RunResult<S> res = trainer.run();
  const auto t1 = std::chrono::steady_clock::now();

  RunOutcome out;
  out.seed = seed;
  out.variant = variant_name(cfg.variant);
  out.test = res.test;
  out.best_valid_auc = res.best_valid_auc;
  out.best_epoch = res.best_epoch;
  out.last_epoch = res.last_epoch;
  out.epochs = res.epochs;
  out.arch_mixtures = res.arch_mixtures;
  out.gamma_domains = res.gamma_domains;
  for (int d = 0; d < trainer.graph().n_domains(); ++d)
    out.domain_names.push_back(trainer.graph().domain_name(d));
  out.warmup_phi_unchanged = res.warmup_phi_unchanged;
  out.outer_steps = res.outer_batch_overlaps.size();
  for (size_t s : res.outer_batch_overlaps) out.outer_overlap_total += s;
  for (const auto& e : trainer.graph().edges())
    if (e.split == Split::train && e.domain != 0) ++out.n_source_train_edges;
  out.theta = res.state.theta.template cast<double>();
  out.phi = res.state.phi.template cast<double>();
  if (cfg.dump_importance) {
    for (const auto& row : trainer.importance_dump(res.state)) out.importance.push_back(row);
  }
  out.runtime_seconds = std::chrono::duration<double>(t1 - t0).count();
  return out;
}

void write_run_dir(const fs::path& dir, const ExperimentConfig& cfg, const RunOutcome& r) {
  fs::create_directories(dir);
  const uint64_t h = config_hash(cfg);

  std::ostringstream epochs;
  for (const auto& e : r.epochs) {
    json rec;
    rec["epoch"] = e.epoch;
    rec["train_loss"] = e.train_loss;
    rec["valid_auc"] = e.valid_auc;
    rec["valid_logloss"] = e.valid_logloss;
    rec["gamma_domains"] = e.gamma_domains;
    rec["arch_mixtures"] = mixtures_to_json(e.arch_mixtures, r.domain_names);
    epochs << rec.dump() << "\n";
  }
  write_text(dir / "epochs.jsonl", epochs.str());
  write_text(dir / "final.json", final_record(r, h).dump(2) + "\n");

  json meta;
  meta["version"] = kVersion;
  meta["config_hash"] = h;
  meta["runtime_seconds"] = r.runtime_seconds;
  meta["best_epoch"] = r.best_epoch;
  meta["last_epoch"] = r.last_epoch;
  meta["best_valid_auc"] = r.best_valid_auc;
  meta["warmup_phi_unchanged"] = r.warmup_phi_unchanged;
  meta["outer_steps"] = r.outer_steps;
  meta["outer_overlap_total"] = r.outer_overlap_total;
  meta["n_source_train_edges"] = r.n_source_train_edges;
  write_text(dir / "runmeta.json", meta.dump(2) + "\n");

  save_checkpoint(dir / "checkpoint.json", Checkpoint{r.theta, r.phi, h});

  if (!r.importance.empty()) {
    std::ostringstream tsv;
    tsv << "user_id\titem_id\tdomain\tgamma\n";
    for (const auto& row : r.importance)
      tsv << row.user << '\t' << row.item << '\t' << row.domain << '\t' << row.gamma << '\n';
    write_text(dir / "importance_weights.tsv", tsv.str());
  }
}

json aggregate_to_json(const ExperimentReport& rep, const ExperimentConfig& cfg) {
  json agg;
  agg["version"] = kVersion;
  agg["variant"] = variant_name(cfg.variant);
  agg["config_hash"] = config_hash(cfg);
  json seeds = json::array();
  for (const auto& r : rep.runs) {
    json e;
    e["seed"] = r.seed;
    e["auc"] = r.test.auc;
    e["logloss"] = r.test.logloss;
    seeds.push_back(e);
  }
  agg["per_seed"] = seeds;
  if (!rep.runs.empty()) {
    agg["auc_mean"] = rep.metrics.auc.mean;
    agg["auc_std"] = rep.metrics.auc.stddev_available ? json(rep.metrics.auc.stddev) : json();
    agg["logloss_mean"] = rep.metrics.logloss.mean;
    agg["logloss_std"] =
        rep.metrics.logloss.stddev_available ? json(rep.metrics.logloss.stddev) : json();
  }
  agg["failures"] = rep.failures;
  return agg;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (tsv.empty() == !synth.has_value())
    throw std::invalid_argument("config: exactly one of dataset.tsv or dataset.synth is required");
  if (!tsv.empty()) domains.validate();
  if (synth) synth->validate();
  if (precision != "float32" && precision != "float64")
    throw std::invalid_argument("config: precision must be float32 or float64");
  if (seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
  if (jobs < 1) throw std::invalid_argument("config: jobs must be at least 1");
  if (model.hidden_dim < 1 || model.perceptron_dim < 1 || model.perceptron_hidden < 1)
    throw std::invalid_argument("config: model widths must be positive");
  if (model.head_widths.empty())
    throw std::invalid_argument("config: head_widths must name at least one hidden layer");
  if (model.op_set.empty() || model.op_set.size() > static_cast<size_t>(kNumOps))
    throw std::invalid_argument("config: op_set must name 1..5 distinct candidate ops");
  for (double r : split_ratios)
    if (r <= 0) throw std::invalid_argument("config: split ratios must be positive");
  if (eval_negative_ratio <= 0)
    throw std::invalid_argument("config: eval_negative_ratio must be positive");
  bilevel.validate();
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: malformed JSON in " + origin + ": " + e.what());
  }
  check_keys(j, {"dataset", "model", "bilevel", "variant", "seeds", "out_dir", "jobs",
                 "precision", "dump_importance"},
             origin);
  ExperimentConfig cfg;

  if (!j.contains("dataset")) throw std::invalid_argument("config: missing dataset section");
  const json& ds = j["dataset"];
  check_keys(ds, {"tsv", "target", "sources", "synth", "resplit", "split_ratios", "split_seed",
                  "eval_negative_ratio"},
             "dataset");
  if (ds.contains("tsv")) {
    cfg.tsv = ds["tsv"].get<std::string>();
    if (!ds.contains("target"))
      throw std::invalid_argument("config: dataset.tsv requires dataset.target");
    cfg.domains.target = ds["target"].get<std::string>();
    if (ds.contains("sources"))
      cfg.domains.sources = ds["sources"].get<std::vector<std::string>>();
  }
  if (ds.contains("synth")) {
    const json& sy = ds["synth"];
    check_keys(sy,
               {"n_users", "n_items_per_domain", "n_domains", "latent_dim",
                "shared_factor_strength", "source_noise_fraction", "positives_per_user", "seed"},
               "dataset.synth");
    SynthConfig sc;
    if (sy.contains("n_users")) sc.n_users = sy["n_users"].get<int>();
    if (sy.contains("n_items_per_domain"))
      sc.n_items_per_domain = sy["n_items_per_domain"].get<int>();
    if (sy.contains("n_domains")) sc.n_domains = sy["n_domains"].get<int>();
    if (sy.contains("latent_dim")) sc.latent_dim = sy["latent_dim"].get<int>();
    if (sy.contains("shared_factor_strength"))
      sc.shared_factor_strength = sy["shared_factor_strength"].get<double>();
    if (sy.contains("source_noise_fraction"))
      sc.source_noise_fraction = sy["source_noise_fraction"].get<double>();
    if (sy.contains("positives_per_user"))
      sc.positives_per_user = sy["positives_per_user"].get<int>();
    if (sy.contains("seed")) sc.seed = sy["seed"].get<uint64_t>();
    cfg.synth = sc;
    cfg.resplit = true;
  }
  if (ds.contains("resplit")) cfg.resplit = ds["resplit"].get<bool>();
  if (ds.contains("split_ratios")) cfg.split_ratios = parse_ratios(ds["split_ratios"], "dataset");
  if (ds.contains("split_seed")) cfg.split_seed = ds["split_seed"].get<uint64_t>();
  if (ds.contains("eval_negative_ratio"))
    cfg.eval_negative_ratio = ds["eval_negative_ratio"].get<double>();

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, {"hidden_dim", "head_widths", "perceptron_dim", "perceptron_hidden",
                   "emb_init_std", "op_set"},
               "model");
    if (m.contains("hidden_dim")) cfg.model.hidden_dim = m["hidden_dim"].get<int>();
    if (m.contains("head_widths")) cfg.model.head_widths = m["head_widths"].get<std::vector<int>>();
    if (m.contains("perceptron_dim")) cfg.model.perceptron_dim = m["perceptron_dim"].get<int>();
    if (m.contains("perceptron_hidden"))
      cfg.model.perceptron_hidden = m["perceptron_hidden"].get<int>();
    if (m.contains("emb_init_std")) cfg.model.emb_init_std = m["emb_init_std"].get<double>();
    if (m.contains("op_set")) {
      cfg.model.op_set.clear();
      for (const auto& name : m["op_set"]) cfg.model.op_set.push_back(parse_op(name));
    }
  }

  if (j.contains("bilevel")) {
    const json& b = j["bilevel"];
    check_keys(b,
               {"K", "alpha", "T_inner", "warmup_epochs", "max_epochs", "patience", "lr_inner",
                "lr_outer", "batch_size", "negative_ratio", "optimizer", "manual_op"},
               "bilevel");
    auto& bc = cfg.bilevel;
    if (b.contains("K")) bc.K = b["K"].get<int>();
    if (b.contains("alpha")) bc.alpha = b["alpha"].get<double>();
    if (b.contains("T_inner")) bc.T_inner = b["T_inner"].get<int>();
    if (b.contains("warmup_epochs")) bc.warmup_epochs = b["warmup_epochs"].get<int>();
    if (b.contains("max_epochs")) bc.max_epochs = b["max_epochs"].get<int>();
    if (b.contains("patience")) bc.patience = b["patience"].get<int>();
    if (b.contains("lr_inner")) bc.lr_inner = b["lr_inner"].get<double>();
    if (b.contains("lr_outer")) bc.lr_outer = b["lr_outer"].get<double>();
    if (b.contains("batch_size")) bc.batch_size = b["batch_size"].get<int>();
    if (b.contains("negative_ratio")) bc.negative_ratio = b["negative_ratio"].get<double>();
    if (b.contains("optimizer")) bc.optimizer = b["optimizer"].get<std::string>();
    if (b.contains("manual_op")) bc.manual_op = parse_op(b["manual_op"].get<std::string>());
  }

  if (j.contains("precision")) cfg.precision = j["precision"].get<std::string>();
  if (j.contains("variant")) cfg.variant = parse_variant(j["variant"].get<std::string>());
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<uint64_t>>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("jobs")) cfg.jobs = j["jobs"].get<int>();
  if (j.contains("dump_importance")) cfg.dump_importance = j["dump_importance"].get<bool>();

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string config_snapshot(const ExperimentConfig& cfg) {
  json j;
  json ds;
  if (!cfg.tsv.empty()) {
    ds["tsv"] = cfg.tsv;
    ds["target"] = cfg.domains.target;
    ds["sources"] = cfg.domains.sources;
  }
  if (cfg.synth) {
    const auto& s = *cfg.synth;
    ds["synth"] = {{"n_users", s.n_users},
                   {"n_items_per_domain", s.n_items_per_domain},
                   {"n_domains", s.n_domains},
                   {"latent_dim", s.latent_dim},
                   {"shared_factor_strength", s.shared_factor_strength},
                   {"source_noise_fraction", s.source_noise_fraction},
                   {"positives_per_user", s.positives_per_user},
                   {"seed", s.seed}};
  }
  ds["resplit"] = cfg.resplit;
  ds["split_ratios"] = cfg.split_ratios;
  ds["split_seed"] = cfg.split_seed;
  ds["eval_negative_ratio"] = cfg.eval_negative_ratio;
  j["dataset"] = ds;

  json ops = json::array();
  for (OpKind o : cfg.model.op_set) ops.push_back(op_name(o));
  j["model"] = {{"hidden_dim", cfg.model.hidden_dim},
                {"head_widths", cfg.model.head_widths},
                {"perceptron_dim", cfg.model.perceptron_dim},
                {"perceptron_hidden", cfg.model.perceptron_hidden},
                {"emb_init_std", cfg.model.emb_init_std},
                {"op_set", ops}};
  j["bilevel"] = {{"K", cfg.bilevel.K},
                  {"alpha", cfg.bilevel.alpha},
                  {"T_inner", cfg.bilevel.T_inner},
                  {"warmup_epochs", cfg.bilevel.warmup_epochs},
                  {"max_epochs", cfg.bilevel.max_epochs},
                  {"patience", cfg.bilevel.patience},
                  {"lr_inner", cfg.bilevel.lr_inner},
                  {"lr_outer", cfg.bilevel.lr_outer},
                  {"batch_size", cfg.bilevel.batch_size},
                  {"negative_ratio", cfg.bilevel.negative_ratio},
                  {"optimizer", cfg.bilevel.optimizer},
                  {"manual_op", op_name(cfg.bilevel.manual_op)}};
  j["precision"] = cfg.precision;
  j["variant"] = variant_name(cfg.variant);
  j["seeds"] = cfg.seeds;
  j["jobs"] = cfg.jobs;
  j["dump_importance"] = cfg.dump_importance;
  return j.dump(2) + "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  // FNV-1a over the canonical snapshot
  const std::string s = config_snapshot(cfg);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg,
                                      const std::string& cli_override) {
  if (!cli_override.empty()) return cli_override;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  const char* root = std::getenv(kOutRootEnv);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return fs::path(root ? root : "runs") / ("run-" + std::string(buf));
}

InteractionGraph assemble_dataset(const ExperimentConfig& cfg) {
  std::vector<Interaction> recs;
  DomainSpec spec;
  if (cfg.synth) {
    auto synth = synth_generate(*cfg.synth);
    recs = std::move(synth.interactions);
    spec = synth.spec;
  } else {
    if (!fs::exists(cfg.tsv))
      throw std::invalid_argument("dataset: no such file " + cfg.tsv);
    recs = ingest_tsv(cfg.tsv);
    spec = cfg.domains;
  }
  if (cfg.resplit) {
    recs = make_splits(std::move(recs), cfg.split_ratios, cfg.split_seed);
    auto g0 = InteractionGraph::build(recs, spec);
    Rng rng(mix_seed(cfg.split_seed, 0xe7a1ULL));
    auto vneg = negative_sample_for_split(g0, Split::valid, cfg.eval_negative_ratio, rng);
    auto tneg = negative_sample_for_split(g0, Split::test, cfg.eval_negative_ratio, rng);
    recs.insert(recs.end(), vneg.begin(), vneg.end());
    recs.insert(recs.end(), tneg.begin(), tneg.end());
  }
  return InteractionGraph::build(recs, spec);
}

RunOutcome run_single(const ExperimentConfig& cfg, const InteractionGraph& graph, uint64_t seed) {
  if (cfg.precision == "float64") return run_single_impl<double>(cfg, graph, seed);
  return run_single_impl<float>(cfg, graph, seed);
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", config_snapshot(cfg));

  InteractionGraph graph = assemble_dataset(cfg);

  const size_t n = cfg.seeds.size();
  std::vector<std::optional<RunOutcome>> slots(n);
  std::vector<std::string> errors(n);
  std::atomic<size_t> next{0};
  const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(n)));

  auto worker = [&]() {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= n) return;
      try {
        slots[k] = run_single(cfg, graph, cfg.seeds[k]);
      } catch (const std::exception& e) {
        errors[k] = std::string("seed ") + std::to_string(cfg.seeds[k]) + ": " + e.what();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentReport rep;
  std::vector<RunMetrics> per_seed;
  for (size_t k = 0; k < n; ++k) {
    if (slots[k]) {
      write_run_dir(out_dir / ("seed_" + std::to_string(cfg.seeds[k])), cfg, *slots[k]);
      per_seed.push_back(slots[k]->test);
      rep.runs.push_back(std::move(*slots[k]));
    } else if (!errors[k].empty()) {
      rep.failures.push_back(errors[k]);
    }
  }
  if (!per_seed.empty()) rep.metrics = aggregate_runs(per_seed);
  write_text(out_dir / "aggregate.json", aggregate_to_json(rep, cfg).dump(2) + "\n");

  if (!rep.failures.empty()) {
    std::string msg = "run failures:";
    for (const auto& f : rep.failures) msg += "\n  " + f;
    throw std::runtime_error(msg);
  }
  return rep;
}

void write_synth_dataset(const ExperimentConfig& cfg, const fs::path& out_dir) {
  if (!cfg.synth) throw std::invalid_argument("synth: config has no dataset.synth section");
  fs::create_directories(out_dir);
  auto synth = synth_generate(*cfg.synth);

  // oracle scores for the emitted (pre-split) interactions
  std::ostringstream oracle;
  oracle << "user_id\titem_id\tdomain\tlabel\toracle_score\n";
  for (size_t i = 0; i < synth.interactions.size(); ++i) {
    const auto& r = synth.interactions[i];
    oracle << r.user << '\t' << r.item << '\t' << r.domain << '\t' << r.label << '\t'
           << synth.oracle_scores[i] << '\n';
  }
  write_text(out_dir / "oracle_scores.tsv", oracle.str());

  auto recs = make_splits(std::move(synth.interactions), cfg.split_ratios, cfg.split_seed);
  auto g0 = InteractionGraph::build(recs, synth.spec);
  Rng rng(mix_seed(cfg.split_seed, 0xe7a1ULL));
  auto vneg = negative_sample_for_split(g0, Split::valid, cfg.eval_negative_ratio, rng);
  auto tneg = negative_sample_for_split(g0, Split::test, cfg.eval_negative_ratio, rng);
  recs.insert(recs.end(), vneg.begin(), vneg.end());
  recs.insert(recs.end(), tneg.begin(), tneg.end());
  write_tsv((out_dir / "dataset.tsv").string(), recs);

  const auto& s = *cfg.synth;
  json meta;
  meta["version"] = kVersion;
  meta["synth"] = {{"n_users", s.n_users},
                   {"n_items_per_domain", s.n_items_per_domain},
                   {"n_domains", s.n_domains},
                   {"latent_dim", s.latent_dim},
                   {"shared_factor_strength", s.shared_factor_strength},
                   {"source_noise_fraction", s.source_noise_fraction},
                   {"positives_per_user", s.positives_per_user},
                   {"seed", s.seed}};
  meta["split_ratios"] = cfg.split_ratios;
  meta["split_seed"] = cfg.split_seed;
  meta["eval_negative_ratio"] = cfg.eval_negative_ratio;
  meta["target"] = synth.spec.target;
  meta["sources"] = synth.spec.sources;
  write_text(out_dir / "synth_meta.json", meta.dump(2) + "\n");
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<AblationRow> rows;
  std::vector<double> full_aucs;
  for (Variant v : all_variants()) {
    ExperimentConfig c = cfg;
    c.variant = v;
    auto rep = run_experiment(c, out_dir / variant_name(v));
    AblationRow row;
    row.variant = variant_name(v);
    row.metrics = rep.metrics;
    if (!rep.runs.empty()) {
      row.arch_mixtures = rep.runs.front().arch_mixtures;
      row.domain_names = rep.runs.front().domain_names;
    }
    if (v == Variant::FULL) {
      full_aucs = rep.metrics.auc.values;
    } else if (full_aucs.size() == rep.metrics.auc.values.size() && full_aucs.size() >= 2) {
      row.vs_full = paired_t_test(full_aucs, rep.metrics.auc.values);
    }
    rows.push_back(std::move(row));
  }

  json j = json::array();
  for (const auto& r : rows) {
    json e;
    e["variant"] = r.variant;
    e["auc_mean"] = r.metrics.auc.mean;
    e["auc_std"] = r.metrics.auc.stddev;
    e["logloss_mean"] = r.metrics.logloss.mean;
    e["logloss_std"] = r.metrics.logloss.stddev;
    e["auc_per_seed"] = r.metrics.auc.values;
    if (r.variant != "FULL") {
      e["t_vs_full"] = r.vs_full.t_statistic;
      e["significant_vs_full"] = r.vs_full.significant;
    }
    j.push_back(e);
  }
  write_text(out_dir / "ablation.json", j.dump(2) + "\n");
  return rows;
}

std::string render_report(const fs::path& run_dir, const fs::path& baseline_dir) {
  if (!fs::exists(run_dir / "aggregate.json"))
    throw std::runtime_error("report: " + run_dir.string() + " is missing aggregate.json");
  json agg = load_json(run_dir / "aggregate.json");

  std::ostringstream out;
  out << "run " << run_dir.string() << " (variant " << agg.value("variant", "?") << ")\n";
  out << "  seeds:";
  for (const auto& e : agg["per_seed"]) out << " " << e["seed"].get<uint64_t>();
  out << "\n";
  char line[160];
  if (agg.contains("auc_mean")) {
    std::snprintf(line, sizeof(line), "  test AUC     %.4f", agg["auc_mean"].get<double>());
    out << line;
    if (!agg["auc_std"].is_null())
      out << " +/- " << std::to_string(agg["auc_std"].get<double>());
    out << "\n";
    std::snprintf(line, sizeof(line), "  test LogLoss %.4f", agg["logloss_mean"].get<double>());
    out << line;
    if (!agg["logloss_std"].is_null())
      out << " +/- " << std::to_string(agg["logloss_std"].get<double>());
    out << "\n";
  }

  // architecture mixtures from the first seed's final record
  for (const auto& e : agg["per_seed"]) {
    const fs::path f = run_dir / ("seed_" + std::to_string(e["seed"].get<uint64_t>())) /
                       "final.json";
    if (!fs::exists(f)) throw std::runtime_error("report: missing artifact " + f.string());
    json fin = load_json(f);
    out << "  architecture mixtures (seed " << e["seed"].get<uint64_t>() << "):\n";
    for (const auto& row : fin["arch_mixtures"]) {
      out << "    layer " << row["layer"].get<int>() << "  domain " << std::setw(6)
          << row["domain"].get<std::string>() << " :";
      for (OpKind op : all_ops()) {
        std::snprintf(line, sizeof(line), " %s=%.3f", op_name(op),
                      row["weights"][op_name(op)].get<double>());
        out << line;
      }
      out << "\n";
    }
    if (!fin["gamma_domains"].empty()) {
      out << "    gamma:";
      for (const auto& g : fin["gamma_domains"]) out << " " << g.get<double>();
      out << "\n";
    }
    break;  // one mixture table is enough for the summary
  }

  if (!baseline_dir.empty()) {
    json base = load_json(baseline_dir / "aggregate.json");
    const double auc_t = agg["auc_mean"].get<double>();
    const double auc_b = base["auc_mean"].get<double>();
    const double ll_t = agg["logloss_mean"].get<double>();
    const double ll_b = base["logloss_mean"].get<double>();
    if (auc_b > 0.5) {
      std::snprintf(line, sizeof(line), "  vs %s: RelaImpr AUC %+.2f%%, LogLoss %+.2f%%\n",
                    baseline_dir.string().c_str(), rela_impr_auc(auc_t, auc_b),
                    rela_impr_logloss(ll_t, ll_b));
    } else {
      std::snprintf(line, sizeof(line),
                    "  vs %s: RelaImpr unavailable (baseline AUC %.4f at or below the 0.5 "
                    "random floor)\n",
                    baseline_dir.string().c_str(), auc_b);
    }
    out << line;
    std::vector<double> ours, theirs;
    for (const auto& e : agg["per_seed"]) ours.push_back(e["auc"].get<double>());
    for (const auto& e : base["per_seed"]) theirs.push_back(e["auc"].get<double>());
    if (ours.size() == theirs.size() && ours.size() >= 2) {
      auto t = paired_t_test(ours, theirs);
      std::snprintf(line, sizeof(line), "  paired t on AUC: t=%.3f, %s at 0.05\n", t.t_statistic,
                    t.significant ? "significant" : "not significant");
      out << line;
    }
  }
  return out.str();
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  json j;
  j["version"] = kVersion;
  j["config_hash"] = ck.config_hash;
  j["theta"] = pv_to_json(ck.theta);
  j["phi"] = pv_to_json(ck.phi);
  write_text(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  json j = load_json(path);
  Checkpoint ck;
  ck.config_hash = j.at("config_hash").get<uint64_t>();
  ck.theta = pv_from_json(j.at("theta"));
  ck.phi = pv_from_json(j.at("phi"));
  return ck;
}

RunMetrics evaluate_checkpoint(const ExperimentConfig& cfg, const InteractionGraph& graph,
                               const Checkpoint& ck) {
  Batch test;  // target-domain CTR, matching the trainer's metric
  for (const auto& e : graph.edges())
    if (e.split == Split::test && e.domain == 0) test.push(e.user, e.item, e.domain, e.label);
  if (cfg.precision == "float64") {
    SupernetModel<double> m(graph, cfg.model);
    if (*m.theta_layout() != *ck.theta.layout)
      throw std::runtime_error("checkpoint does not match the configured model layout");
    auto scores = m.batch_scores(ck.theta, test);
    return {auc(scores, std::vector<int>(test.label.begin(), test.label.end())),
            logloss(scores, std::vector<int>(test.label.begin(), test.label.end()))};
  }
  SupernetModel<float> m(graph, cfg.model);
  if (*m.theta_layout() != *ck.theta.layout)
    throw std::runtime_error("checkpoint does not match the configured model layout");
  auto theta32 = ck.theta.cast<float>();
  auto scores = m.batch_scores(theta32, test);
  return {auc(scores, std::vector<int>(test.label.begin(), test.label.end())),
          logloss(scores, std::vector<int>(test.label.begin(), test.label.end()))};
}

}  // namespace cdnas
