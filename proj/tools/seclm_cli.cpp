// seclm: generate | analyze-subspace | train | evaluate | ablate | baselines | report
//
// Every subcommand writes run.json into its output directory: the resolved
// configuration, the schema versions and the git-style SHA-1 of each input
// file. Values come from built-in defaults, then --config (a JSON object keyed
// by long flag names without dashes), then flags. Default output root:
// $SECLM_OUTPUT_ROOT, else ./runs.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "seclm/baselines.hpp"
#include "seclm/checkpoint.hpp"
#include "seclm/csv.hpp"
#include "seclm/dataset_io.hpp"
#include "seclm/error.hpp"
#include "seclm/eval.hpp"
#include "seclm/subspace.hpp"
#include "seclm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seclm;

namespace {

constexpr int kRunSchemaVersion = 1;

std::string git_blob_sha1(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string body = buf.str();
  const std::string header = "blob " + std::to_string(body.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, body.data(), body.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

void log(const std::string& msg) { std::cerr << "seclm: " << msg << "\n"; }

void write_run(const fs::path& out, const std::string& command, const json& config, const std::vector<fs::path>& inputs) {
  fs::create_directories(out);
  json hashes = json::object();
  for (const auto& p : inputs) hashes[p.lexically_normal().string()] = git_blob_sha1(p);
  const json run{{"command", command},
                 {"config", config},
                 {"schema_versions", {{"run", kRunSchemaVersion}, {"dataset", kDatasetSchemaVersion}, {"checkpoint", kCheckpointVersion}}},
                 {"inputs", hashes}};
  std::ofstream(out / "run.json") << run.dump(2) << "\n";
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("SECLM_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Config, "bad ratio '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorKind::Config, "no ratios given");
  return out;
}

std::vector<TrainMode> parse_modes(const std::string& s) {
  if (s == "all") return all_train_modes();
  std::vector<TrainMode> out;
  for (const auto& m : split_list(s)) out.push_back(train_mode_from_string(m));
  if (out.empty()) throw Error(ErrorKind::Config, "no modes given");
  return out;
}

std::vector<MultiviewFrame> train_frames(const Dataset& d) {
  std::vector<MultiviewFrame> out;
  for (const auto& f : d.frames)
    if (f.split == FrameSplit::Train) out.push_back(f);
  if (out.empty()) throw Error(ErrorKind::Data, "dataset has no training frames");
  return out;
}

std::vector<const MultiviewFrame*> test_frames(const Dataset& d) {
  auto out = d.select(FrameSplit::Test, true);
  if (out.empty()) throw Error(ErrorKind::Data, "dataset has no test frames with images");
  return out;
}

std::vector<std::string> secondary_names(const SkeletonSpec& s) {
  return {s.names.begin() + static_cast<std::ptrdiff_t>(s.primary_count()), s.names.end()};
}

void check_model(const TrainConfig& cfg, const SkeletonSpec& s) {
  if (cfg.detector.primary_count != s.primary_count() || cfg.detector.secondary_count != s.secondary_count())
    throw Error(ErrorKind::Config, "model landmark counts (" + std::to_string(cfg.detector.primary_count) + "+" +
                                       std::to_string(cfg.detector.secondary_count) + ") do not match the dataset skeleton");
}

/// Options shared by every command that trains.
struct TrainFlags {
  std::string mode;
  double ratio;
  std::uint64_t seed;
  std::size_t pretrain_steps, refine_steps, batch, unlabeled_batch, decay_steps;
  double lr, decay, lambda_l;

  void add(CLI::App* app, bool with_mode) {
    if (with_mode) app->add_option("--mode", mode, "ll | ll+t | ll+g | ll+g+c");
    app->add_option("--ratio", ratio, "label ratio |D_X| / N");
    app->add_option("--seed", seed);
    app->add_option("--pretrain-steps", pretrain_steps);
    app->add_option("--refine-steps", refine_steps);
    app->add_option("--batch-size", batch);
    app->add_option("--unlabeled-batch", unlabeled_batch);
    app->add_option("--lr", lr);
    app->add_option("--decay-rate", decay);
    app->add_option("--decay-steps", decay_steps);
    app->add_option("--lambda-l", lambda_l);
  }

  explicit TrainFlags(const TrainConfig& c)
      : mode(to_string(c.mode)), ratio(c.label_ratio), seed(c.seed), pretrain_steps(c.pretrain_steps), refine_steps(c.refine_steps),
        batch(c.batch_size), unlabeled_batch(c.unlabeled_batch), decay_steps(c.decay_steps), lr(c.learning_rate), decay(c.decay_rate),
        lambda_l(c.lambda_l), base(c) {}

  TrainConfig resolve(std::size_t threads) const {
    TrainConfig c = base;
    c.mode = train_mode_from_string(mode);
    c.label_ratio = ratio;
    c.seed = seed;
    c.pretrain_steps = pretrain_steps;
    c.refine_steps = refine_steps;
    c.batch_size = batch;
    c.unlabeled_batch = unlabeled_batch;
    c.learning_rate = lr;
    c.decay_rate = decay;
    c.decay_steps = decay_steps;
    c.lambda_l = lambda_l;
    c.threads = threads;
    c.validate();
    return c;
  }

  TrainConfig base;
};

/// Loads --config before parsing so that flags given on the command line win.
json preload_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i], path;
    if (a == "--config" && i + 1 < argc) path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0) path = a.substr(9);
    if (path.empty()) continue;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot open config file " + path);
    try {
      json j = json::parse(in);
      if (!j.is_object()) throw Error(ErrorKind::Config, "config file must hold a JSON object");
      return j;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Config, "config file " + path + ": " + e.what());
    }
  }
  return json::object();
}

/// Applies top-level config keys (long flag names without dashes) as option defaults.
void apply_config_defaults(CLI::App& app, const json& cfg) {
  std::vector<CLI::App*> scopes = app.get_subcommands({});
  scopes.push_back(&app);
  for (const auto& [k, v] : cfg.items()) {
    if (k == "train" || k == "generator") continue;
    bool used = false;
    for (CLI::App* scope : scopes) {
      CLI::Option* opt = scope->get_option_no_throw("--" + k);
      if (!opt) continue;
      used = true;
      opt->run_callback_for_default();
      try {
        opt->default_val(v.is_string() ? v.get<std::string>() : v.dump());
      } catch (const CLI::Error& e) {
        throw Error(ErrorKind::Config, "config key '" + k + "': " + e.what());
      }
      opt->required(false);
    }
    if (!used) throw Error(ErrorKind::Config, "unknown config key '" + k + "'");
  }
}

}  // namespace

int main(int argc, char** argv) try {
  const json file = preload_config(argc, argv);
  const TrainConfig file_train = file.contains("train") ? train_config_from_json(file["train"]) : TrainConfig{};
  CLI::App app{"Secondary landmark detection through shared primary-landmark geometry"};
  app.require_subcommand(1);
  app.fallthrough();  // --config / --threads may follow the subcommand
  std::string config_path;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  app.add_option("--threads", threads, "worker threads for per-item forward/backward");

  std::string data, out, checkpoint;
  auto add_io = [&](CLI::App* sub, bool needs_data) {
    auto* o = sub->add_option("--data", data, "dataset directory");
    if (needs_data) o->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", out, "output directory");
  };

  // generate
  GeneratorConfig gen;
  auto* c_gen = app.add_subcommand("generate", "render a synthetic multiview dataset");
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--train-frames", gen.train_frames);
  c_gen->add_option("--test-frames", gen.test_frames);
  c_gen->add_option("--image-frames", gen.image_frames, "training frames that get images");
  c_gen->add_option("--cameras", gen.rig.count);
  c_gen->add_option("--image-size", gen.rig.image_size);
  c_gen->add_option("--out", out, "dataset directory");

  // analyze-subspace
  std::string modes_2d3d = "2d,3d", configs_arg = "all";
  std::optional<std::size_t> bases;
  auto* c_sub = app.add_subcommand("analyze-subspace", "2D vs 3D shared-representation study");
  add_io(c_sub, true);
  c_sub->add_option("--modes", modes_2d3d, "2d,3d");
  c_sub->add_option("--bases", bases, "basis count B (default: 95% variance)");
  c_sub->add_option("--configs", configs_arg, "primary configurations, comma separated, or all");

  // train / evaluate / ablate / baselines
  TrainFlags tf(file_train);
  auto* c_train = app.add_subcommand("train", "two-phase training on one split");
  add_io(c_train, true);
  tf.add(c_train, true);

  std::string method = "model";
  double eval_ratio = 0.0;
  std::uint64_t eval_seed = 3;
  auto* c_eval = app.add_subcommand("evaluate", "PCKh and correlation statistics of a checkpoint");
  add_io(c_eval, true);
  c_eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--method", method, "method label in the results table");
  c_eval->add_option("--ratio", eval_ratio, "label ratio recorded in the results table");
  c_eval->add_option("--seed", eval_seed, "view-pair sampling seed for correlation statistics");

  std::string modes_arg = "all", ratios_arg = "0.014,0.043,0.071,0.1";
  auto* c_abl = app.add_subcommand("ablate", "mode x label-ratio grid");
  add_io(c_abl, true);
  tf.add(c_abl, false);
  c_abl->add_option("--modes", modes_arg, "all or a comma-separated mode list");
  c_abl->add_option("--ratios", ratios_arg, "comma-separated label ratios");

  BaselineRunConfig bcfg;
  double base_ratio = 0.1;
  std::uint64_t base_seed = 1;
  auto* c_base = app.add_subcommand("baselines", "ALS / BALS / VAE completion against the detector");
  add_io(c_base, true);
  c_base->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  c_base->add_option("--ratio", base_ratio, "label ratio defining the labeled secondary set");
  c_base->add_option("--seed", base_seed, "split seed");
  c_base->add_option("--rank", bcfg.als.rank);
  c_base->add_option("--neighbours", bcfg.neighbours);
  c_base->add_option("--vae-steps", bcfg.vae.steps);

  std::vector<std::string> inputs;
  auto* c_rep = app.add_subcommand("report", "merge results tables");
  c_rep->add_option("--inputs", inputs, "results.csv files or directories holding one")->required()->delimiter(',');
  c_rep->add_option("--out", out, "output directory");

  try {
    apply_config_defaults(app, file);
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return exit_code_for(ErrorKind::Config);
    }
    if (threads < 1) throw Error(ErrorKind::Config, "--threads must be at least 1");

    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (out.empty()) out = default_out(name).string();
    const fs::path out_dir(out);

    if (name == "generate") {
      if (file.contains("generator")) {
        GeneratorConfig base = generator_from_json(file["generator"]);
        base.seed = gen.seed;
        base.train_frames = gen.train_frames;
        base.test_frames = gen.test_frames;
        base.image_frames = gen.image_frames;
        base.rig.count = gen.rig.count;
        base.rig.image_size = gen.rig.image_size;
        gen = base;
      }
      log("generating " + std::to_string(gen.train_frames) + "+" + std::to_string(gen.test_frames) + " frames into " + out);
      write_dataset(generate_dataset(gen), out_dir);
      write_run(out_dir, name, generator_to_json(gen), {});
      return 0;
    }

    if (name == "report") {
      std::vector<csv::Table> tables;
      std::vector<fs::path> files;
      for (const auto& in : inputs) {
        fs::path p(in);
        if (fs::is_directory(p)) p /= "results.csv";
        if (!fs::exists(p)) throw Error(ErrorKind::Data, "results table " + p.string() + " does not exist");
        tables.push_back(csv::read(p));
        files.push_back(p);
      }
      fs::create_directories(out_dir);
      const ReportSummary s = report_tables(tables, out_dir);
      for (const auto& w : s.warnings) log("warning: " + w);
      write_run(out_dir, name, json{{"inputs", inputs}}, files);
      return 0;
    }

    log("loading " + data);
    const Dataset ds = load_dataset(data);
    std::vector<fs::path> hashed = dataset_files(data);

    if (name == "analyze-subspace") {
      SubspaceStudyConfig study;
      study.bases = bases;
      study.run_2d = study.run_3d = false;
      for (const auto& m : split_list(modes_2d3d)) {
        if (m == "2d") study.run_2d = true;
        else if (m == "3d") study.run_3d = true;
        else throw Error(ErrorKind::Config, "unknown subspace mode '" + m + "'");
      }
      std::vector<PrimaryConfig> configs = default_primary_configs(ds.skeleton);
      if (configs_arg != "all") {
        std::vector<PrimaryConfig> chosen;
        for (const auto& id : split_list(configs_arg)) {
          auto it = std::find_if(configs.begin(), configs.end(), [&](const PrimaryConfig& c) { return c.id == id; });
          if (it == configs.end()) throw Error(ErrorKind::Config, "unknown primary configuration '" + id + "'");
          chosen.push_back(*it);
        }
        configs = chosen;
      }
      const auto train = ds.select(FrameSplit::Train, false);
      const auto test = ds.select(FrameSplit::Test, false);
      const SubspaceReport r = compare_2d_3d(train, test, ds.rig, ds.skeleton, configs, study);
      for (const auto& w : r.warnings) log("warning: " + w);
      fs::create_directories(out_dir);
      csv::Writer rows({"config", "mode", "landmark", "mean_px", "median_px", "mean_canonical", "median_canonical"});
      for (const auto& row : r.rows)
        rows.row({row.config, row.mode, ds.skeleton.names[ds.skeleton.primary_count() + row.landmark], csv::format(row.mean_px),
                  csv::format(row.median_px), csv::format(row.mean_canonical), csv::format(row.median_canonical)});
      rows.save(out_dir / "subspace_errors.csv");
      csv::Writer sum({"config", "mean_px_2d", "mean_px_3d", "ratio"});
      for (const auto& s : r.summary)
        sum.row({s.config, csv::format(s.mean_px_2d), csv::format(s.mean_px_3d), study.run_2d && study.run_3d ? csv::format(s.ratio_px()) : "NA"});
      sum.save(out_dir / "subspace_summary.csv");
      write_run(out_dir, name, json{{"bases", r.bases}, {"modes", modes_2d3d}, {"configs", configs_arg}}, hashed);
      return 0;
    }

    if (name == "train") {
      TrainConfig cfg = tf.resolve(threads);
      check_model(cfg, ds.skeleton);
      const DatasetSplit split = make_splits(train_frames(ds), ds.skeleton, ds.rig, cfg.label_ratio, cfg.seed);
      log("training " + to_string(cfg.mode) + " at ratio " + csv::format(cfg.label_ratio) + " (|D_X| = " + std::to_string(split.labeled_secondary.size()) + ")");
      train(cfg, split, out_dir);
      write_run(out_dir, name, to_json(cfg), hashed);
      return 0;
    }

    if (name == "evaluate") {
      const Checkpoint ck = load_checkpoint(checkpoint);
      hashed.push_back(checkpoint);
      const TrainConfig cfg = file_train;
      check_model(cfg, ds.skeleton);
      const auto test = test_frames(ds);
      const PckhResult r = evaluate_secondary(cfg.detector, ck.parameters, test, ds.skeleton, pckh_curve_grid());
      fs::create_directories(out_dir);
      csv::Writer results(kResultsHeader);
      append_results(results, method, eval_ratio, r, secondary_names(ds.skeleton));
      results.save(out_dir / "results.csv");
      const CorrelationStats cs = correlation_stats(cfg.detector, cfg.predictor, ck.parameters, test, ds.rig, ds.skeleton.frame, eval_seed);
      csv::Writer corr({"kind", "value"});
      for (double v : cs.self) corr.row({"self", csv::format(v)});
      for (double v : cs.cross) corr.row({"cross", csv::format(v)});
      corr.save(out_dir / "correlations.csv");
      csv::Writer cm({"mean_self", "mean_cross", "gap", "pairs", "skipped"});
      cm.row({csv::format(cs.mean_self), csv::format(cs.mean_cross), csv::format(cs.gap()), std::to_string(cs.pairs), std::to_string(cs.skipped)});
      cm.save(out_dir / "correlation_summary.csv");
      write_run(out_dir, name, json{{"method", method}, {"ratio", eval_ratio}, {"seed", eval_seed}, {"train", to_json(cfg)}}, hashed);
      return 0;
    }

    if (name == "ablate") {
      const TrainConfig base = tf.resolve(threads);
      check_model(base, ds.skeleton);
      std::vector<TrainConfig> grid;
      for (double r : parse_ratios(ratios_arg))
        for (TrainMode m : parse_modes(modes_arg)) {
          TrainConfig c = base;
          c.label_ratio = r;
          c.mode = m;
          c.validate();
          grid.push_back(c);
        }
      log("ablation over " + std::to_string(grid.size()) + " runs");
      const AblationResult r = run_ablation(grid, train_frames(ds), test_frames(ds), ds.skeleton, ds.rig, out_dir / "runs");
      fs::create_directories(out_dir);
      r.table.save(out_dir / "results.csv");
      int failed = 0;
      for (const auto& run : r.runs)
        if (run.error) {
          ++failed;
          log("run " + to_string(run.config.mode) + " @ " + csv::format(run.config.label_ratio) + " failed: " + *run.error);
        }
      json cfg = to_json(base);
      cfg["modes"] = modes_arg;
      cfg["ratios"] = ratios_arg;
      write_run(out_dir, name, cfg, hashed);
      return failed == 0 ? 0 : exit_code_for(ErrorKind::Numerical);
    }

    if (name == "baselines") {
      const Checkpoint ck = load_checkpoint(checkpoint);
      hashed.push_back(checkpoint);
      const TrainConfig cfg = file_train;
      check_model(cfg, ds.skeleton);
      const DatasetSplit split = make_splits(train_frames(ds), ds.skeleton, ds.rig, base_ratio, base_seed);
      std::vector<const MultiviewFrame*> labeled;
      for (std::size_t i : split.labeled_secondary) labeled.push_back(&split.frames[i]);
      const auto results = run_baselines(labeled, test_frames(ds), ds.rig, ds.skeleton, cfg.detector, ck.parameters, bcfg, kPckhThresholds);
      fs::create_directories(out_dir);
      csv::Writer table(kResultsHeader);
      for (const auto& r : results) append_results(table, r.method, base_ratio, r.pckh, secondary_names(ds.skeleton));
      table.save(out_dir / "results.csv");
      write_run(out_dir, name,
                json{{"ratio", base_ratio}, {"seed", base_seed}, {"rank", bcfg.als.rank}, {"neighbours", bcfg.neighbours}, {"vae_steps", bcfg.vae.steps}},
                hashed);
      return 0;
    }
    throw Error(ErrorKind::Config, "unhandled subcommand " + name);
  } catch (const Error& e) {
    std::cerr << "seclm: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "seclm: data error: " << e.what() << "\n";
    return exit_code_for(ErrorKind::Data);
  } catch (const std::exception& e) {
    std::cerr << "seclm: unexpected error: " << e.what() << "\n";
    return 1;
  }
} catch (const Error& e) {
  std::cerr << "seclm: " << e.what() << "\n";
  return exit_code_for(e.kind());
}
