#pragma once

#include <string>

#include <json.hpp>

#include "mdseg/augment.hpp"
#include "mdseg/hdbscan.hpp"
#include "mdseg/synthetic.hpp"
#include "mdseg/trainer.hpp"
#include "mdseg/unet.hpp"

// JSON <-> config structs. Parsing is strict about key names (a typo in a
// config file must fail loudly, not silently fall back to a default) but
// every field is optional, so partial configs merge over defaults.

namespace mdseg {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed,
                       const std::string& where) {
  require(j.is_object(), "config: " + where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok) throw ContractViolation("config: unknown key \"" + key + "\" in " + where);
  }
}

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"base_width", c.base_width},
       {"depth", c.depth},
       {"num_classes", c.num_classes},
       {"negative_slope", c.negative_slope}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  check_keys(j, {"in_channels", "base_width", "depth", "num_classes", "negative_slope"},
             "model");
  c.in_channels = j.value("in_channels", c.in_channels);
  c.base_width = j.value("base_width", c.base_width);
  c.depth = j.value("depth", c.depth);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.negative_slope = j.value("negative_slope", c.negative_slope);
}

inline void to_json(nlohmann::json& j, const AugConfig& c) {
  j = {{"hflip_prob", c.hflip_prob}, {"max_shift", c.max_shift},
       {"scale_min", c.scale_min},   {"scale_max", c.scale_max},
       {"gamma_min", c.gamma_min},   {"gamma_max", c.gamma_max},
       {"noise_sigma", c.noise_sigma}, {"rho_min", c.rho_min},
       {"rho_max", c.rho_max}};
}

inline void from_json(const nlohmann::json& j, AugConfig& c) {
  check_keys(j,
             {"hflip_prob", "max_shift", "scale_min", "scale_max", "gamma_min",
              "gamma_max", "noise_sigma", "rho_min", "rho_max"},
             "aug");
  c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
  c.max_shift = j.value("max_shift", c.max_shift);
  c.scale_min = j.value("scale_min", c.scale_min);
  c.scale_max = j.value("scale_max", c.scale_max);
  c.gamma_min = j.value("gamma_min", c.gamma_min);
  c.gamma_max = j.value("gamma_max", c.gamma_max);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.rho_min = j.value("rho_min", c.rho_min);
  c.rho_max = j.value("rho_max", c.rho_max);
}

inline void to_json(nlohmann::json& j, const HdbscanConfig& c) {
  j = {{"min_cluster_size", c.min_cluster_size}, {"min_samples", c.min_samples}};
}

inline void from_json(const nlohmann::json& j, HdbscanConfig& c) {
  check_keys(j, {"min_cluster_size", "min_samples"}, "hdbscan");
  c.min_cluster_size = j.value("min_cluster_size", c.min_cluster_size);
  c.min_samples = j.value("min_samples", c.min_samples);
}

inline void to_json(nlohmann::json& j, const CmmdTrainConfig& c) {
  j = {{"refresh_interval", c.refresh_interval},
       {"bank_size", c.bank_size},
       {"layers", c.layers},
       {"hdbscan", c.hdbscan}};
}

inline void from_json(const nlohmann::json& j, CmmdTrainConfig& c) {
  check_keys(j, {"refresh_interval", "bank_size", "layers", "hdbscan"}, "cmmd");
  c.refresh_interval = j.value("refresh_interval", c.refresh_interval);
  c.bank_size = j.value("bank_size", c.bank_size);
  c.layers = j.value("layers", c.layers);
  if (j.contains("hdbscan")) j.at("hdbscan").get_to(c.hdbscan);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iter_max", c.iter_max},
       {"batch_labeled", c.batch_labeled},
       {"batch_unlabeled", c.batch_unlabeled},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"ema_alpha", c.ema_alpha},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval},
       {"model", c.model},
       {"aug", c.aug},
       {"cmmd", c.cmmd}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j,
             {"iter_max", "batch_labeled", "batch_unlabeled", "lr", "momentum",
              "ema_alpha", "seed", "checkpoint_interval", "model", "aug", "cmmd"},
             "train");
  c.iter_max = j.value("iter_max", c.iter_max);
  c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
  c.batch_unlabeled = j.value("batch_unlabeled", c.batch_unlabeled);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.ema_alpha = j.value("ema_alpha", c.ema_alpha);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("aug")) j.at("aug").get_to(c.aug);
  if (j.contains("cmmd")) j.at("cmmd").get_to(c.cmmd);
}

inline void to_json(nlohmann::json& j, const DomainStyle& s) {
  j = {{"offset", s.offset},
       {"contrast", s.contrast},
       {"noise_sigma", s.noise_sigma},
       {"texture_freq", s.texture_freq},
       {"texture_amp", s.texture_amp}};
}

inline void from_json(const nlohmann::json& j, DomainStyle& s) {
  check_keys(j, {"offset", "contrast", "noise_sigma", "texture_freq", "texture_amp"},
             "style");
  s.offset = j.value("offset", s.offset);
  s.contrast = j.value("contrast", s.contrast);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.texture_freq = j.value("texture_freq", s.texture_freq);
  s.texture_amp = j.value("texture_amp", s.texture_amp);
}

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"k", c.k},
       {"styles", c.styles},
       {"image_size", c.image_size},
       {"shapes_min", c.shapes_min},
       {"shapes_max", c.shapes_max},
       {"radius_min", c.radius_min},
       {"radius_max", c.radius_max},
       {"labeled_count", c.labeled_count},
       {"unlabeled_count", c.unlabeled_count},
       {"test_per_domain", c.test_per_domain},
       {"labeled_domain", c.labeled_domain},
       {"fg_min", c.fg_min},
       {"fg_max", c.fg_max}};
}

inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  check_keys(j,
             {"k", "styles", "image_size", "shapes_min", "shapes_max",
              "radius_min", "radius_max", "labeled_count", "unlabeled_count",
              "test_per_domain", "labeled_domain", "fg_min", "fg_max"},
             "data");
  c.k = j.value("k", c.k);
  c.styles = j.value("styles", c.styles);
  c.image_size = j.value("image_size", c.image_size);
  c.shapes_min = j.value("shapes_min", c.shapes_min);
  c.shapes_max = j.value("shapes_max", c.shapes_max);
  c.radius_min = j.value("radius_min", c.radius_min);
  c.radius_max = j.value("radius_max", c.radius_max);
  c.labeled_count = j.value("labeled_count", c.labeled_count);
  c.unlabeled_count = j.value("unlabeled_count", c.unlabeled_count);
  c.test_per_domain = j.value("test_per_domain", c.test_per_domain);
  c.labeled_domain = j.value("labeled_domain", c.labeled_domain);
  c.fg_min = j.value("fg_min", c.fg_min);
  c.fg_max = j.value("fg_max", c.fg_max);
}

}  // namespace mdseg
