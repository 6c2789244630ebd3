// Command-line front end: corpus synthesis, waveform preprocessing, training,
// evaluation, domain probing, and embedding export, all driven by a flat
// `key = value` config plus --set overrides. Every run leaves a resolved.cfg
// snapshot beside its outputs so reported numbers stay traceable.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idfe/audio.hpp"
#include "idfe/checkpoint.hpp"
#include "idfe/config.hpp"
#include "idfe/corpus.hpp"
#include "idfe/errors.hpp"
#include "idfe/metrics.hpp"
#include "idfe/model.hpp"
#include "idfe/rng.hpp"
#include "idfe/train.hpp"
#include "idfe/wav_io.hpp"

namespace fs = std::filesystem;
using idfe::Config;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key = value settings file");
  cmd->add_option("--set", args.sets, "override one config key as KEY=VALUE (repeatable)");
  cmd->add_option("--out", args.out, "output directory (default runs/<cmd>-<confighash>-<time>)");
  cmd->add_option("--seed", args.seed, "override the 'seed' config key");
}

// Config file, then --set overrides, then the --seed flag. The result is what
// the resolved-config snapshot records.
Config resolve_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config() : Config::from_file(args.config_path);
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw idfe::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed_given) cfg.set("seed", std::to_string(args.seed));
  return cfg;
}

fs::path make_outdir(const std::string& sub, const Config& cfg, const std::string& explicit_out) {
  fs::path dir;
  if (!explicit_out.empty()) {
    dir = explicit_out;
  } else {
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_buf{};
    localtime_r(&now, &tm_buf);
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(cfg.hash()));
    dir = fs::path("runs") / (sub + "-" + std::string(hash).substr(0, 8) + "-" + stamp);
  }
  fs::create_directories(dir);
  std::ofstream snap(dir / "resolved.cfg");
  if (!snap) throw idfe::AssetError("cannot write " + (dir / "resolved.cfg").string());
  snap << cfg.canonical();
  return dir;
}

std::string require_key(const Config& cfg, const std::string& key, const std::string& sub) {
  const std::string v = cfg.get_str(key, "");
  if (v.empty()) throw idfe::ConfigError(sub + ": config key '" + key + "' is required");
  return v;
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string pct2(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

// Loads a checkpoint and rebuilds the model it belongs to; weights are
// promoted to double for the eval helpers.
std::pair<idfe::ModelParams, idfe::ModelConfig> load_model(const std::string& path) {
  const auto tensors = idfe::load_checkpoint(path);
  const auto cfg = idfe::infer_model_config(tensors);
  idfe::ModelParams params;
  for (const auto& [name, t] : tensors) params.tensors.emplace(name, t.cast<double>());
  return {std::move(params), cfg};
}

idfe::CorpusSet load_data(const std::string& manifest, int case_id) {
  auto data = idfe::load_manifest(manifest);
  if (case_id != 0) data = idfe::compose_case(case_id, data.corpora);
  idfe::materialize(data);
  data.validate();
  return data;
}

int cmd_synth(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  cfg.restrict_to({"domains", "feature_dim", "layers", "frames_min", "frames_max",
                   "bias_magnitude", "class_sep", "sigma", "utts_per_class", "seed"});

  const std::uint64_t seed = cfg.get_u64("seed", 0);
  const auto spec = idfe::make_synth_spec(
      static_cast<int>(cfg.get_int("domains", 3)), static_cast<int>(cfg.get_int("feature_dim", 16)),
      static_cast<int>(cfg.get_int("layers", 3)), static_cast<int>(cfg.get_int("frames_min", 8)),
      static_cast<int>(cfg.get_int("frames_max", 16)), cfg.get_double("bias_magnitude", 2.0),
      cfg.get_double("class_sep", 1.0), cfg.get_double("sigma", 1.0), seed);
  const auto set = idfe::synth_generate(
      spec, static_cast<int>(cfg.get_int("utts_per_class", 100)), idfe::derive_seed(seed, {1}));

  const fs::path dir = make_outdir("synth", cfg, args.out);
  fs::create_directories(dir / "stacks");
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw idfe::AssetError("cannot write " + (dir / "manifest.tsv").string());
  manifest << "# utt_id\tlabel\tdomain\tpath\n";

  std::int64_t files = 0;
  for (const auto& corpus : set.corpora) {
    std::int64_t bona = 0, spoof = 0;
    for (const auto& r : corpus.records) {
      const std::string rel = "stacks/" + r.utt_id + ".idf1";
      idfe::write_embedding(dir / rel, r.stack);
      manifest << r.utt_id << '\t' << (r.y_s == 0 ? "bonafide" : "spoof") << '\t' << r.y_d << '\t'
               << rel << '\n';
      ++files;
      ++(r.y_s == 0 ? bona : spoof);
    }
    std::cout << corpus.name << ": bona " << bona << ", spoof " << spoof << "\n";
  }
  std::cout << "wrote " << files << " stacks + manifest.tsv -> " << dir.string() << "\n";
  return 0;
}

int cmd_prep(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  cfg.restrict_to({"in", "trim_db", "segment_seconds", "assets", "policy", "seed"});

  const fs::path in = require_key(cfg, "in", "prep");
  std::vector<fs::path> inputs;
  if (fs::is_directory(in)) {
    for (const auto& entry : fs::directory_iterator(in)) {
      if (entry.path().extension() == ".wav") inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(in);
  }
  if (inputs.empty()) throw idfe::ConfigError("prep: no .wav files under " + in.string());

  const double trim_db = cfg.get_double("trim_db", 40.0);
  const double seconds = cfg.get_double("segment_seconds", 4.0);
  const std::string assets_path = cfg.get_str("assets", "");
  idfe::AssetPools pools;
  idfe::AugmentPolicy policy = idfe::AugmentPolicy::noise;
  if (!assets_path.empty()) {
    pools = idfe::load_asset_pools(assets_path);
    policy = idfe::parse_augment_policy(cfg.get_str("policy", "noise"));
  }

  const fs::path dir = make_outdir("prep", cfg, args.out);
  auto rng = idfe::make_engine(idfe::derive_seed(cfg.get_u64("seed", 0), {0x70726570ULL}));
  for (const auto& path : inputs) {
    auto w = idfe::trim_edges(idfe::read_wav(path), trim_db);
    if (seconds > 0.0) w = idfe::segment(w, seconds, rng);
    if (!assets_path.empty()) w = idfe::augment(w, policy, pools, rng);
    idfe::write_wav(dir / path.filename(), w);
  }
  std::cout << "prepared " << inputs.size() << " files -> " << dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  cfg.restrict_to({"manifest", "case", "alpha", "lr", "batch_size", "epochs", "gamma", "seed",
                   "precision", "class_weight_mode", "frame_encoder", "num_heads", "value_dim",
                   "embedding_dim", "hidden_dim", "dropout"});

  const std::string manifest = require_key(cfg, "manifest", "train");
  auto data = load_data(manifest, static_cast<int>(cfg.get_int("case", 0)));
  if (data.total_records() == 0) throw idfe::ConfigError("train: dataset is empty");
  const auto& first = *data.all().front();

  idfe::ModelConfig mcfg;
  mcfg.frame_encoder = cfg.get_bool("frame_encoder", true);
  mcfg.mhfa.num_layers = static_cast<int>(first.stack.dim(0));
  mcfg.mhfa.frame_dim = static_cast<int>(first.stack.dim(2));
  mcfg.mhfa.num_heads = static_cast<int>(cfg.get_int("num_heads", 4));
  mcfg.mhfa.value_dim = static_cast<int>(cfg.get_int("value_dim", 16));
  mcfg.mhfa.embedding_dim = static_cast<int>(cfg.get_int("embedding_dim", 64));
  mcfg.spoof.hidden_dim = static_cast<int>(cfg.get_int("hidden_dim", 128));
  mcfg.spoof.dropout_rate = cfg.get_double("dropout", 0.2);
  mcfg.spoof.num_outputs = 2;
  mcfg.domain = mcfg.spoof;
  mcfg.domain.num_outputs = std::max(data.domains(), 1);

  idfe::TrainConfig tcfg;
  tcfg.alpha = cfg.get_double("alpha", 0.1);
  tcfg.lr = cfg.get_double("lr", 1e-3);
  tcfg.batch_size = static_cast<int>(cfg.get_int("batch_size", 32));
  tcfg.epochs = static_cast<int>(cfg.get_int("epochs", 10));
  tcfg.gamma = cfg.get_double("gamma", 10.0);
  tcfg.seed = cfg.get_u64("seed", 0);
  tcfg.precision = idfe::parse_precision(cfg.get_str("precision", "f32"));
  tcfg.class_weight_mode = idfe::parse_class_weight_mode(cfg.get_str("class_weight_mode", "ratio"));

  const fs::path dir = make_outdir("train", cfg, args.out);
  tcfg.checkpoint_dir = dir.string();

  const auto result = idfe::train(data, mcfg, tcfg);
  for (const auto& st : result.log) {
    std::printf("epoch %d  loss_s %.6f  loss_d %.6f  lambda %.4f  domain_acc %.4f  spoof_acc %.4f\n",
                st.epoch, st.loss_s, st.loss_d, st.lambda, st.domain_acc, st.spoof_acc);
  }
  std::cout << "final checkpoint: " << result.checkpoint_paths.back() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  cfg.restrict_to({"checkpoint", "manifest", "seed"});

  auto [params, mcfg] = load_model(require_key(cfg, "checkpoint", "eval"));
  const auto data = load_data(require_key(cfg, "manifest", "eval"), 0);
  const auto records = data.all();
  if (records.empty()) throw idfe::ConfigError("eval: dataset is empty");

  const auto scores = idfe::score_records(params, mcfg, records);
  idfe::ScoreSet set;
  for (std::size_t i = 0; i < records.size(); ++i) {
    set.entries.push_back({records[i]->utt_id,
                           data.corpora[static_cast<std::size_t>(records[i]->y_d)].name,
                           records[i]->y_s, scores[i]});
  }

  const fs::path dir = make_outdir("eval", cfg, args.out);
  idfe::export_scores(set, dir / "scores.tsv");

  std::map<std::string, double> per_domain;
  std::string table = "domain\teer%\tthreshold\n";
  for (const auto& [name, group] : set.by_domain()) {
    const auto r = idfe::eer(group);
    per_domain[name] = r.eer;
    table += name + "\t" + pct2(r.eer) + "\t" + fmt9(r.threshold) + "\n";
  }
  table += "pooled\t" + pct2(idfe::pooled_eer(per_domain)) + "\n";

  std::cout << table;
  std::ofstream report(dir / "report.tsv");
  if (!report) throw idfe::AssetError("cannot write " + (dir / "report.tsv").string());
  report << table;
  return 0;
}

int cmd_probe(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  cfg.restrict_to({"checkpoint", "manifest", "train_frac", "seed"});

  auto [params, mcfg] = load_model(require_key(cfg, "checkpoint", "probe"));
  const auto data = load_data(require_key(cfg, "manifest", "probe"), 0);
  const auto records = data.all();

  idfe::EmbeddingDump dump;
  const auto embs = idfe::embed_records(params, mcfg, records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    dump.rows.push_back({records[i]->utt_id, records[i]->y_s, records[i]->y_d, embs[i]});
  }

  const auto result =
      idfe::domain_probe(dump, cfg.get_double("train_frac", 0.8), cfg.get_u64("seed", 0));

  const fs::path dir = make_outdir("probe", cfg, args.out);
  std::ofstream out(dir / "probe.tsv");
  if (!out) throw idfe::AssetError("cannot write " + (dir / "probe.tsv").string());
  out << "accuracy\tchance\n" << fmt9(result.accuracy) << '\t' << fmt9(result.chance) << '\n';

  std::printf("domain probe accuracy %.4f (chance %.4f)\n", result.accuracy, result.chance);
  return 0;
}

int cmd_export_emb(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  cfg.restrict_to({"checkpoint", "manifest", "seed"});

  auto [params, mcfg] = load_model(require_key(cfg, "checkpoint", "export-emb"));
  const auto data = load_data(require_key(cfg, "manifest", "export-emb"), 0);
  const auto records = data.all();

  idfe::EmbeddingDump dump;
  const auto embs = idfe::embed_records(params, mcfg, records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    dump.rows.push_back({records[i]->utt_id, records[i]->y_s, records[i]->y_d, embs[i]});
  }

  const fs::path dir = make_outdir("export-emb", cfg, args.out);
  idfe::export_embeddings(dump, dir / "embeddings.tsv");
  std::cout << "wrote " << dump.rows.size() << " embeddings of dim " << dump.dim() << " -> "
            << (dir / "embeddings.tsv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invariant-domain feature extraction lab"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* synth = app.add_subcommand("synth", "generate biased synthetic corpora");
  CLI::App* prep = app.add_subcommand("prep", "trim/segment/augment wav files");
  CLI::App* train = app.add_subcommand("train", "train a detector on a stack manifest");
  CLI::App* eval = app.add_subcommand("eval", "score a manifest and report per-domain EER");
  CLI::App* probe = app.add_subcommand("probe", "linear domain probe over frozen embeddings");
  CLI::App* export_emb = app.add_subcommand("export-emb", "dump embeddings as TSV");
  for (CLI::App* cmd : {synth, prep, train, eval, probe, export_emb}) add_common(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags are config errors
  }

  try {
    for (CLI::App* cmd : {synth, prep, train, eval, probe, export_emb}) {
      if (cmd->parsed()) args.seed_given = cmd->count("--seed") > 0;
    }
    if (synth->parsed()) return cmd_synth(args);
    if (prep->parsed()) return cmd_prep(args);
    if (train->parsed()) return cmd_train(args);
    if (eval->parsed()) return cmd_eval(args);
    if (probe->parsed()) return cmd_probe(args);
    if (export_emb->parsed()) return cmd_export_emb(args);
    return 2;  // unreachable with require_subcommand(1)
  } catch (const idfe::DivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const idfe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
