#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdseg/config_json.hpp"
#include "mdseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdseg;

namespace {

constexpr int kLayerUnset = -1;

// Fields the method source leaves open; listed verbatim in resolved-config.json
// so a reader can tell pinned constants from our choices.
const std::vector<std::string> kDecisionFields = {
    "data.*",           "model.in_channels", "model.base_width",
    "train.iter_max",   "train.batch_labeled", "train.batch_unlabeled",
    "train.lr",         "train.momentum",    "train.seed",
    "train.checkpoint_interval", "aug.*",    "cmmd.layers",
    "eval.which"};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ContractViolation("cannot open config file: " + path);
  json j = json::parse(f, nullptr, true, /*ignore_comments=*/true);
  require(j.is_object(), "config root must be a JSON object");
  return j;
}

// --set a.b.c=value ; value parsed as JSON when possible, else as a string
void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  require(eq != std::string::npos && eq > 0, "--set expects key.path=value: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json val;
  try {
    val = json::parse(raw);
  } catch (const json::parse_error&) {
    val = raw;
  }
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    require(!key.empty(), "--set has an empty path segment: " + kv);
    if (dot == std::string::npos) {
      (*cur)[key] = val;
      return;
    }
    cur = &(*cur)[key];
    require(cur->is_object() || cur->is_null(), "--set path crosses a scalar: " + kv);
    start = dot + 1;
  }
}

void parse_section(const json& j, const char* name, const auto& fill) {
  if (j.contains(name)) fill(j.at(name));
}

TrainConfig train_config_from(const json& j) {
  TrainConfig cfg;
  parse_section(j, "model", [&](const json& s) { s.get_to(cfg.model); });
  parse_section(j, "aug", [&](const json& s) { s.get_to(cfg.aug); });
  parse_section(j, "cmmd", [&](const json& s) { s.get_to(cfg.cmmd); });
  parse_section(j, "train", [&](const json& s) {
    check_keys(s,
               {"iter_max", "batch_labeled", "batch_unlabeled", "lr", "momentum",
                "ema_alpha", "seed", "checkpoint_interval", "ablation"},
               "train");
    cfg.iter_max = s.value("iter_max", cfg.iter_max);
    cfg.batch_labeled = s.value("batch_labeled", cfg.batch_labeled);
    cfg.batch_unlabeled = s.value("batch_unlabeled", cfg.batch_unlabeled);
    cfg.lr = s.value("lr", cfg.lr);
    cfg.momentum = s.value("momentum", cfg.momentum);
    cfg.ema_alpha = s.value("ema_alpha", cfg.ema_alpha);
    cfg.seed = s.value("seed", cfg.seed);
    cfg.checkpoint_interval = s.value("checkpoint_interval", cfg.checkpoint_interval);
  });
  return cfg;
}

json train_section_json(const TrainConfig& c, const std::string& ablation) {
  return {{"iter_max", c.iter_max},
          {"batch_labeled", c.batch_labeled},
          {"batch_unlabeled", c.batch_unlabeled},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"ema_alpha", c.ema_alpha},
          {"seed", c.seed},
          {"checkpoint_interval", c.checkpoint_interval},
          {"ablation", ablation}};
}

void write_resolved(const std::string& out_dir, json resolved) {
  resolved["_decisions"] = kDecisionFields;
  fs::create_directories(out_dir);
  atomic_write(out_dir + "/resolved-config.json",
               [&](std::ostream& os) { os << resolved.dump(2) << "\n"; });
}

std::string pick(const std::string& flag, const json& j, const char* sec,
                 const char* key, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (j.contains(sec) && j.at(sec).contains(key))
    return j.at(sec).at(key).get<std::string>();
  return fallback;
}

const ModelParams<float>& pick_params(const Trainer& t, const std::string& which) {
  if (which == "student") return t.student();
  if (which == "teacher") return t.teacher();
  throw ContractViolation("--which must be teacher or student, got: " + which);
}

int cmd_gen_data(const json& merged, const std::string& out_dir,
                 std::uint64_t seed, bool seed_set) {
  SyntheticConfig cfg;
  json data = merged.value("data", json::object());
  if (data.contains("seed")) {
    if (!seed_set) seed = data.at("seed").get<std::uint64_t>();
    data.erase("seed");
  }
  data.get_to(cfg);
  validate(cfg);
  require(!out_dir.empty(), "gen-data: --output-dir required");
  gen_synthetic(cfg, seed, out_dir);

  json data_out = cfg;
  data_out["seed"] = seed;
  write_resolved(out_dir, {{"data", data_out}, {"output_dir", out_dir}});
  std::printf("wrote dataset to %s\n", out_dir.c_str());
  return 0;
}

int cmd_train(const json& merged, std::string ablation_str,
              const std::string& manifest_flag, const std::string& out_dir,
              const std::string& resume) {
  if (ablation_str.empty() && merged.contains("train"))
    ablation_str = merged.at("train").value("ablation", "");
  require(!ablation_str.empty() || !resume.empty(), "train: --ablation required");
  const Ablation ab =
      ablation_str.empty() ? Ablation::baseline : ablation_from_string(ablation_str);
  const std::string manifest = pick(manifest_flag, merged, "data", "manifest", "");
  require(!manifest.empty(), "train: --data manifest required");
  require(!out_dir.empty(), "train: --output-dir required");

  DataSplits splits = load_splits(read_manifest(manifest));
  TrainConfig cfg = train_config_from(merged);
  Trainer trainer = resume.empty()
                        ? Trainer(cfg, ab, std::move(splits))
                        : Trainer::load_checkpoint(resume, std::move(splits));

  json resolved;
  resolved["data"] = {{"manifest", manifest}};
  resolved["model"] = trainer.config().model;
  resolved["aug"] = trainer.config().aug;
  resolved["cmmd"] = trainer.config().cmmd;
  resolved["train"] = train_section_json(trainer.config(), to_string(trainer.ablation()));
  resolved["output_dir"] = out_dir;
  write_resolved(out_dir, resolved);

  trainer.run(out_dir);
  std::printf("trained %ld iterations (%s) -> %s\n", trainer.iteration(),
              to_string(trainer.ablation()).c_str(), out_dir.c_str());
  return 0;
}

int cmd_eval(const json& merged, const std::string& ckpt_flag,
             const std::string& manifest_flag, std::string which,
             const std::string& out_dir) {
  const std::string ckpt = pick(ckpt_flag, merged, "eval", "checkpoint", "");
  const std::string manifest = pick(manifest_flag, merged, "data", "manifest", "");
  which = pick(which, merged, "eval", "which", "teacher");
  require(!ckpt.empty(), "eval: --checkpoint required");
  require(!manifest.empty(), "eval: --data manifest required");
  require(!out_dir.empty(), "eval: --output-dir required");

  DataSplits splits = load_splits(read_manifest(manifest));
  Trainer trainer = Trainer::load_checkpoint(ckpt, std::move(splits));
  const MetricsReport rep = evaluate(trainer.config().model,
                                     pick_params(trainer, which), trainer.data());

  fs::create_directories(out_dir);
  atomic_write(out_dir + "/metrics.csv",
               [&](std::ostream& os) { os << metrics_to_csv(rep); });
  atomic_write(out_dir + "/metrics.json",
               [&](std::ostream& os) { os << metrics_to_json(rep); });
  write_resolved(out_dir, {{"data", {{"manifest", manifest}}},
                           {"eval", {{"checkpoint", ckpt}, {"which", which}}},
                           {"output_dir", out_dir}});
  std::fputs(metrics_to_csv(rep).c_str(), stdout);
  return 0;
}

int cmd_embed(const json& merged, const std::string& ckpt_flag,
              const std::string& manifest_flag, std::string which, int layer,
              const std::string& out_dir) {
  const std::string ckpt = pick(ckpt_flag, merged, "eval", "checkpoint", "");
  const std::string manifest = pick(manifest_flag, merged, "data", "manifest", "");
  which = pick(which, merged, "eval", "which", "student");
  if (layer == kLayerUnset && merged.contains("eval"))
    layer = merged.at("eval").value("layer", kLayerUnset);
  require(!ckpt.empty(), "embed: --checkpoint required");
  require(!manifest.empty(), "embed: --data manifest required");
  require(!out_dir.empty(), "embed: --output-dir required");

  DataSplits splits = load_splits(read_manifest(manifest));
  Trainer trainer = Trainer::load_checkpoint(ckpt, std::move(splits));
  if (layer == kLayerUnset) layer = int(trainer.config().model.depth);
  const EmbedResult r = embed_dump(trainer.config().model,
                                   pick_params(trainer, which), trainer.data(), layer);

  fs::create_directories(out_dir);
  Tensor<double> doms(Shape{r.domains.size()});
  for (std::size_t i = 0; i < r.domains.size(); ++i) doms[i] = double(r.domains[i]);
  write_mdt1_multi(out_dir + "/embedding.mdt", {r.features, r.pca2, doms});

  json sil;
  sil["records"] = {"features", "pca2", "domains"};
  sil["layer"] = layer;
  sil["which"] = which;
  sil["silhouette"] = r.sil.defined ? json(r.sil.value) : json(nullptr);
  sil["degenerate"] = r.degenerate;
  atomic_write(out_dir + "/silhouette.json",
               [&](std::ostream& os) { os << sil.dump(2) << "\n"; });
  atomic_write(out_dir + "/embedding.svg",
               [&](std::ostream& os) { os << embed_svg(r.pca2, r.domains); });
  write_resolved(out_dir,
                 {{"data", {{"manifest", manifest}}},
                  {"eval", {{"checkpoint", ckpt}, {"which", which}, {"layer", layer}}},
                  {"output_dir", out_dir}});
  if (r.sil.defined)
    std::printf("layer %d silhouette by true domain: %.6f\n", layer, r.sil.value);
  else
    std::printf("layer %d silhouette undefined (single domain)\n", layer);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-domain semi-supervised segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest, ablation, resume, ckpt;
  std::string which;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  int layer = kLayerUnset;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON config file");
    c->add_option("--set", sets, "override config field, key.path=value")
        ->take_all();
    c->add_option("--output-dir", out_dir, "output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
  add_common(gen);
  auto* seed_opt = gen->add_option("--seed", seed, "generation seed");

  auto* train = app.add_subcommand("train", "run teacher-student training");
  add_common(train);
  train->add_option("--ablation", ablation, "baseline | cpm | cpm+cmmd");
  train->add_option("--data", manifest, "dataset manifest (JSONL)");
  train->add_option("--resume", resume, "checkpoint directory to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev);
  ev->add_option("--checkpoint", ckpt, "checkpoint directory");
  ev->add_option("--data", manifest, "dataset manifest (JSONL)");
  ev->add_option("--which", which, "teacher | student");

  auto* em = app.add_subcommand("embed", "dump encoder features, PCA plot, silhouette");
  add_common(em);
  em->add_option("--checkpoint", ckpt, "checkpoint directory");
  em->add_option("--data", manifest, "dataset manifest (JSONL)");
  em->add_option("--which", which, "teacher | student");
  em->add_option("--layer", layer, "encoder layer, 1-based (default: deepest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    json merged = load_config_file(config_path);
    for (const auto& kv : sets) apply_override(merged, kv);
    if (out_dir.empty()) merged.value("output_dir", "").swap(out_dir);

    if (gen->parsed()) return cmd_gen_data(merged, out_dir, seed, seed_opt->count() > 0);
    if (train->parsed()) return cmd_train(merged, ablation, manifest, out_dir, resume);
    if (ev->parsed()) return cmd_eval(merged, ckpt, manifest, which, out_dir);
    return cmd_embed(merged, ckpt, manifest, which, layer, out_dir);
  } catch (const NumericsError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
