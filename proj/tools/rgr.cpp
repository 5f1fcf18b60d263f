#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rgr/checkpoint.hpp"
#include "rgr/config.hpp"
#include "rgr/datagen.hpp"
#include "rgr/digest.hpp"
#include "rgr/error.hpp"
#include "rgr/evaluation.hpp"
#include "rgr/inference.hpp"
#include "rgr/parallel.hpp"
#include "rgr/serving_sim.hpp"
#include "rgr/trainer.hpp"

namespace fs = std::filesystem;
using namespace rgr;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "rgr-out";
  std::vector<std::string> sets;
  bool quiet = false;
};

void note(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << "rgr: " << msg << "\n";
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& kv : c.sets) {
    auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorCode::kInvalidConfig, "--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec, ErrorCode::kIoError, "cannot create output directory " + p.string());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  require(f.good(), ErrorCode::kIoError, "cannot write " + p.string());
  return f;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(f.good(), ErrorCode::kIoError, "cannot read " + p.string() + " (run the upstream command first)");
  return f;
}

void write_text(const fs::path& p, const std::string& text) {
  auto f = open_out(p);
  f << text;
  require(f.good(), ErrorCode::kIoError, "write failed: " + p.string());
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// The config.txt artifact pins the digest every later step checks against.
void write_config(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.txt", "# digest=" + cfg.digest() + "\n" + cfg.canonical());
}

void check_config_artifact(const fs::path& dir, const RunConfig& cfg) {
  auto path = dir / "config.txt";
  if (!fs::exists(path)) return;
  auto f = open_in(path);
  std::string first;
  std::getline(f, first);
  const std::string want = "# digest=" + cfg.digest();
  if (first != want)
    fail(ErrorCode::kDigestMismatch, "config.txt in " + dir.string() + " was written for a different config ('" +
                                         first.substr(first.find('=') + 1) + "' vs '" + cfg.digest() + "')");
}

// ---- artifact stages ---------------------------------------------------------

void stage_gen(const RunConfig& cfg, const fs::path& dir, const Common& c) {
  World world = generate_world(cfg.resolved_world());
  SessionLog log = generate_sessions(world);
  write_config(dir, cfg);
  {
    auto f = open_out(dir / "items.tsv");
    write_items(f, world, cfg.digest());
  }
  {
    auto f = open_out(dir / "sessions.tsv");
    write_sessions(f, log, cfg.digest());
  }
  note(c, "gen: " + std::to_string(world.items.size()) + " items, " + std::to_string(log.train.size()) +
              " training sessions, " + std::to_string(log.holdout.size()) + " held out");
}

void stage_tokenize(const RunConfig& cfg, const fs::path& dir, const Common& c) {
  check_config_artifact(dir, cfg);
  std::vector<WorldItem> items;
  {
    auto f = open_in(dir / "items.tsv");
    items = read_items(f, cfg.digest());
  }
  std::vector<ItemFeature> features;
  features.reserve(items.size());
  for (const auto& it : items) features.push_back({it.item_id, it.feature});
  Codebooks cb = train_codebooks(features, cfg.model.vocab_sizes, cfg.tokenizer_seed(), cfg.tokenizer);
  SidIndex index(assign_corpus(features, cb));
  save_checkpoint((dir / "codebooks.ckpt").string(), pack_codebooks(cb, cfg.digest()));
  {
    auto f = open_out(dir / "sids.tsv");
    write_sids(f, index, cfg.digest());
  }
  note(c, "tokenize: " + std::to_string(index.size()) + " items assigned");
}

// Rebuilds the shared experiment data from gen/tokenize artifacts.
Experiment load_experiment(const RunConfig& cfg, const fs::path& dir) {
  check_config_artifact(dir, cfg);
  Experiment exp;
  exp.config = cfg;
  {
    auto f = open_in(dir / "sessions.tsv");
    exp.log = read_sessions(f, cfg.digest());
  }
  {
    auto f = open_in(dir / "sids.tsv");
    exp.index = read_sids(f, cfg.digest());
  }
  auto ck = load_checkpoint((dir / "codebooks.ckpt").string());
  check_digest(ck, cfg.digest());
  exp.codebooks = unpack_codebooks(ck);
  for (const auto& s : exp.log.train) exp.train_samples.push_back(to_sample(s, exp.index));
  for (const auto& s : exp.log.holdout) exp.holdout_histories.push_back(to_sample(s, exp.index).history);
  return exp;
}

std::string model_file(Variant v) { return "model." + std::string(variant_name(v)) + ".ckpt"; }

std::string train_log_tsv(const TrainedModel& m) {
  auto opt = [](const std::optional<double>& v) { return v ? fixed6(*v) : std::string("-"); };
  std::string out = "step\tlr\tloss\tiap\tntp\tldpo\tbce\tgrad_norm\tbatch\n";
  for (const auto& s : m.log) {
    out += std::to_string(s.step) + "\t" + fixed6(s.learning_rate) + "\t" + fixed6(s.loss) + "\t" + fixed6(s.iap) +
           "\t" + fixed6(s.ntp) + "\t" + opt(s.ldpo) + "\t" + opt(s.bce) + "\t" + fixed6(s.grad_norm) + "\t" +
           s.batch_digest + "\n";
  }
  return out;
}

void stage_train(const RunConfig& cfg, const fs::path& dir, Variant v, int replicate, const Experiment& exp,
                 const Common& c) {
  note(c, "train " + std::string(variant_name(v)) + ": " + std::to_string(cfg.train.steps) + " steps");
  const auto t0 = std::chrono::steady_clock::now();
  TrainedModel m = train_model(exp.train_samples, cfg.model, cfg.train, v, cfg.train_seed(replicate));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ModelBundle bundle{cfg.model, exp.codebooks, std::move(m), 0};
  save_checkpoint((dir / model_file(v)).string(), pack_model(bundle, cfg.digest()));
  write_text(dir / ("train." + std::string(variant_name(v)) + ".tsv"), train_log_tsv(bundle.model));
  std::string last;
  if (!bundle.model.log.empty()) last = ", final loss " + fixed6(bundle.model.log.back().loss);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", secs);
  note(c, "train " + std::string(variant_name(v)) + ": done in " + buf + " s" + last);
}

ModelBundle load_model(const RunConfig& cfg, const fs::path& dir, Variant v) {
  auto ck = load_checkpoint((dir / model_file(v)).string());
  check_digest(ck, cfg.digest());
  return unpack_model(ck);
}

MetricsReport stage_eval(const RunConfig& cfg, const fs::path& dir, Variant v, const Experiment& exp) {
  ModelBundle b = load_model(cfg, dir, v);
  auto results = retrieve_all(exp, b.model, cfg.retrieval);
  MetricsReport r = tiered_report(results, exp.log.holdout, cfg.eval.ks, std::string(variant_name(v)));
  r.config_digest = cfg.digest();
  r.notes["variant"] = std::string(variant_name(v));
  r.notes["mode"] = std::string(rank_mode_name(cfg.retrieval.mode));
  const std::string base = "eval." + std::string(variant_name(v));
  write_text(dir / (base + ".tsv"), r.to_tsv());
  write_text(dir / (base + ".txt"), r.summary());
  return r;
}

void write_report(const fs::path& dir, const std::string& base, const MetricsReport& r) {
  write_text(dir / (base + ".tsv"), r.to_tsv());
  write_text(dir / (base + ".txt"), r.summary());
}

std::vector<Variant> parse_variants(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(parse_variant(n));
  return out;
}

std::string result_digest(const RetrievalResult& r) {
  Fnv1a h;
  for (const auto& it : r.items) {
    h.pod<std::int64_t>(it.item_id);
    h.pod<double>(it.rsp_logscore);
    h.pod<double>(it.iap_logscore);
  }
  return h.hex();
}

// ---- serving ------------------------------------------------------------------

// Versioned models behind the serving handles. Version 0 is the loaded
// checkpoint; each sync runs a few fine-tuning steps on the samples of
// users ingested since the previous sync.
class StreamingModels {
 public:
  StreamingModels(const Experiment& exp, TrainedModel start) : exp_(exp) {
    versions_.push_back(std::move(start));
    for (std::size_t i = 0; i < exp.train_samples.size(); ++i)
      latest_[exp.train_samples[i].user_id] = i;
  }

  std::string retrieve(int version, std::int64_t user) {
    auto key = std::make_pair(version, user);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    require(version >= 0 && static_cast<std::size_t>(version) < versions_.size(), ErrorCode::kInvalidArgument,
            "serve-sim: unknown model version");
    require(user >= 0 && static_cast<std::size_t>(user) < exp_.holdout_histories.size(),
            ErrorCode::kInvalidArgument, "serve-sim: unknown user");
    const TrainedModel& m = versions_[static_cast<std::size_t>(version)];
    const auto& hist = exp_.holdout_histories[static_cast<std::size_t>(user)];
    const auto& opts = exp_.config.retrieval;
    FlushDenormals ftz;
    RetrievalResult r = m.head && opts.mode != RankMode::kIapOnly
                            ? beam_search(hist, m.backbone, &*m.head, exp_.index, opts)
                            : iap_only_rank(hist, m.backbone, exp_.index, opts.beams, opts.temperature);
    return memo_.emplace(key, result_digest(r)).first->second;
  }

  void ingest(std::int64_t user) { pending_.push_back(user); }

  void sync(int new_version) {
    TrainedModel next = versions_.back();
    std::vector<const SessionSample*> pool;
    for (auto u : pending_) {
      auto it = latest_.find(u);
      if (it != latest_.end()) pool.push_back(&exp_.train_samples[it->second]);
    }
    pending_.clear();
    const int steps = exp_.config.serving.stream_steps_per_sync;
    if (!pool.empty() && steps > 0) {
      TrainConfig tc = exp_.config.train;
      tc.weights.alpha = next.alpha;
      Trainer trainer(std::move(next), tc);
      const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
      std::size_t cursor = 0;
      for (int s = 0; s < steps; ++s) {
        std::vector<const SessionSample*> batch;
        for (std::size_t i = 0; i < std::min(bs, pool.size()); ++i) batch.push_back(pool[cursor++ % pool.size()]);
        trainer.step(batch, tc.learning_rate * 0.1);
      }
      next = trainer.release();
    }
    require(static_cast<std::size_t>(new_version) == versions_.size(), ErrorCode::kInvalidArgument,
            "serve-sim: versions must advance by one");
    versions_.push_back(std::move(next));
  }

 private:
  const Experiment& exp_;
  std::vector<TrainedModel> versions_;
  std::map<std::int64_t, std::size_t> latest_;  // user -> last training sample
  std::vector<std::int64_t> pending_;
  std::map<std::pair<int, std::int64_t>, std::string> memo_;
};

// ---- commands -------------------------------------------------------------------

int cmd_gen(const Common& c) {
  RunConfig cfg = resolve(c);
  stage_gen(cfg, out_dir(c), c);
  std::cout << "config_digest=" << cfg.digest() << "\n";
  return 0;
}

int cmd_tokenize(const Common& c) {
  RunConfig cfg = resolve(c);
  stage_tokenize(cfg, out_dir(c), c);
  return 0;
}

int cmd_train(const Common& c, const std::string& variant, int replicate) {
  RunConfig cfg = resolve(c);
  auto dir = out_dir(c);
  Experiment exp = load_experiment(cfg, dir);
  stage_train(cfg, dir, parse_variant(variant), replicate, exp, c);
  return 0;
}

int cmd_eval(const Common& c, const std::string& variant) {
  RunConfig cfg = resolve(c);
  auto dir = out_dir(c);
  Experiment exp = load_experiment(cfg, dir);
  std::cout << stage_eval(cfg, dir, parse_variant(variant), exp).summary();
  return 0;
}

int cmd_retrieve(const Common& c, const std::string& variant, bool fuse, int top,
                 const std::vector<std::int64_t>& users) {
  RunConfig cfg = resolve(c);
  if (fuse) cfg.retrieval.mode = RankMode::kFuse;
  auto dir = out_dir(c);
  Experiment exp = load_experiment(cfg, dir);
  ModelBundle b = load_model(cfg, dir, parse_variant(variant));
  auto results = retrieve_all(exp, b.model, cfg.retrieval);
  const std::string name = "retrieve." + variant + ".tsv";
  auto f = open_out(dir / name);
  f << "user_id\trank\titem_id\trsp_logscore\tiap_logscore\n";
  for (std::size_t u = 0; u < results.size(); ++u) {
    const auto uid = exp.log.holdout[u].user_id;
    if (!users.empty() && std::find(users.begin(), users.end(), uid) == users.end()) continue;
    const auto& items = results[u].items;
    for (std::size_t i = 0; i < items.size() && static_cast<int>(i) < top; ++i)
      f << uid << "\t" << i + 1 << "\t" << items[i].item_id << "\t" << fixed6(items[i].rsp_logscore) << "\t"
        << fixed6(items[i].iap_logscore) << "\n";
  }
  note(c, "retrieve: wrote " + (dir / name).string());
  return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& variants) {
  RunConfig cfg = resolve(c);
  if (!variants.empty()) cfg.eval.variants = parse_variants(variants);
  auto dir = out_dir(c);
  note(c, "ablate: " + std::to_string(cfg.eval.variants.size()) + " variants x " +
              std::to_string(cfg.eval.replicates) + " seeds");
  Experiment exp = prepare_experiment(cfg);
  ModelCache cache(exp);
  MetricsReport r = run_ablation(exp, cache);
  write_report(dir, "ablation", r);
  std::cout << r.summary();
  return 0;
}

int cmd_sweep(const Common& c, const std::string& param, const std::vector<double>& values) {
  require(param == "alpha" || param == "lambda2", ErrorCode::kInvalidArgument,
          "sweep: --param must be alpha or lambda2, got '" + param + "'");
  RunConfig cfg = resolve(c);
  auto dir = out_dir(c);
  Experiment exp = prepare_experiment(cfg);
  ModelCache cache(exp);
  MetricsReport r;
  if (param == "alpha") {
    r = alpha_sweep(exp, cache, values.empty() ? cfg.eval.alpha_values : values);
  } else {
    std::vector<int> lams = cfg.eval.lambda2_values;
    if (!values.empty()) {
      lams.clear();
      for (double v : values) {
        require(v == static_cast<int>(v), ErrorCode::kInvalidArgument, "lambda2 values must be integers");
        lams.push_back(static_cast<int>(v));
      }
    }
    r = lambda2_sweep(exp, cache, lams);
  }
  write_report(dir, "sweep-" + param, r);
  std::cout << r.summary();
  return 0;
}

int cmd_serve(const Common& c, const std::string& variant, bool events, bool no_model) {
  RunConfig cfg = resolve(c);
  auto dir = out_dir(c);
  SimConfig sc = cfg.resolved_serving();
  ServingHandles h;
  std::optional<Experiment> exp;
  std::optional<StreamingModels> models;
  if (no_model) {
    // Placeholder retrieval: a digest of (version, user).
    h.retrieve = [](int version, std::int64_t user) {
      Fnv1a f;
      f.pod<std::int64_t>(version);
      f.pod<std::int64_t>(user);
      return f.hex();
    };
  } else {
    exp.emplace(load_experiment(cfg, dir));
    models.emplace(*exp, load_model(cfg, dir, parse_variant(variant)).model);
    h.retrieve = [&](int version, std::int64_t user) { return models->retrieve(version, user); };
    h.ingest = [&](std::int64_t user, std::int64_t) { models->ingest(user); };
    h.sync = [&](int v) { models->sync(v); };
  }
  ServingReport rep = run_simulation(sc, h, events);
  std::string summary = "config_digest=" + cfg.digest() + "\n" + rep.summary();
  write_text(dir / "serving.txt", summary);
  if (events) {
    auto f = open_out(dir / "events.tsv");
    write_event_log(f, rep.events);
  }
  std::cout << summary;
  return 0;
}

int cmd_pipeline(const Common& c) {
  RunConfig cfg = resolve(c);
  auto dir = out_dir(c);
  const auto t0 = std::chrono::steady_clock::now();
  stage_gen(cfg, dir, c);
  stage_tokenize(cfg, dir, c);
  Experiment exp = load_experiment(cfg, dir);
  MetricsReport report;
  report.kind = "pipeline";
  report.config_digest = cfg.digest();
  report.seeds.push_back(cfg.train_seed(0));
  for (Variant v : cfg.eval.variants) {
    stage_train(cfg, dir, v, 0, exp, c);
    MetricsReport r = stage_eval(cfg, dir, v, exp);
    for (auto& row : r.rows) report.rows.push_back(row);
  }
  write_report(dir, "report", report);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", secs);
  note(c, std::string("pipeline: finished in ") + buf + " s");
  std::cout << report.summary();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rgr: generative retrieval with listwise preference training and refined scoring"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Config file (key = value lines)");
    sub->add_option("--seed", common.seed, "Master seed (overrides run.seed)");
    sub->add_option("--out", common.out, "Artifact directory")->capture_default_str();
    sub->add_option("--set", common.sets, "Override one config key, key=value (repeatable)");
    sub->add_flag("-q,--quiet", common.quiet, "No progress on stderr");
  };

  std::string variant = "full";
  int replicate = 0;
  bool fuse = false;
  int top = 100;
  std::vector<std::int64_t> users;
  std::vector<std::string> variants;
  std::string param;
  std::vector<double> values;
  bool events = false;
  bool no_model = false;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic world and sessions");
  auto* tok = app.add_subcommand("tokenize", "Train codebooks and assign semantic IDs");
  auto* train = app.add_subcommand("train", "Train one model variant");
  train->add_option("--variant", variant, "full | no-iap | no-rsp | no-both")->capture_default_str();
  train->add_option("--replicate", replicate, "Training seed index")->capture_default_str();
  auto* retrieve = app.add_subcommand("retrieve", "Retrieve for held-out users");
  retrieve->add_option("--variant", variant)->capture_default_str();
  retrieve->add_flag("--fuse", fuse, "Rank by the sum of rank-head and generative log scores");
  retrieve->add_option("--top", top, "Items per user")->capture_default_str()->check(CLI::PositiveNumber);
  retrieve->add_option("--user", users, "Restrict to these user ids");
  auto* eval = app.add_subcommand("eval", "HR@K of one trained variant");
  eval->add_option("--variant", variant)->capture_default_str();
  auto* ablate = app.add_subcommand("ablate", "Variant x seed ablation matrix");
  ablate->add_option("--variants", variants, "Subset of variants");
  auto* sweep = app.add_subcommand("sweep", "Sweep alpha (training) or lambda2 (retrieval)");
  sweep->add_option("--param", param, "alpha | lambda2")->required();
  sweep->add_option("--values", values, "Values (default from config)")->delimiter(',');
  auto* serve = app.add_subcommand("serve-sim", "Simulate asynchronous pre-computation serving");
  serve->add_option("--variant", variant)->capture_default_str();
  serve->add_flag("--events", events, "Write the event log to events.tsv");
  serve->add_flag("--no-model", no_model, "Use a placeholder retrieval handle instead of a checkpoint");
  auto* pipe = app.add_subcommand("pipeline", "gen, tokenize, train, eval and report in one go");
  for (auto* s : {gen, tok, train, retrieve, eval, ablate, sweep, serve, pipe}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "rgr: error: InvalidArgument: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*tok) return cmd_tokenize(common);
    if (*train) return cmd_train(common, variant, replicate);
    if (*retrieve) return cmd_retrieve(common, variant, fuse, top, users);
    if (*eval) return cmd_eval(common, variant);
    if (*ablate) return cmd_ablate(common, variants);
    if (*sweep) return cmd_sweep(common, param, values);
    if (*serve) return cmd_serve(common, variant, events, no_model);
    if (*pipe) return cmd_pipeline(common);
  } catch (const rgr::Error& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "rgr: error: " << error_code_name(e.code()) << ": " << msg << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rgr: error: Internal: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
