#include "mdseg/trainer.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mdseg/config_json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mdseg {

Ablation ablation_from_string(const std::string& s) {
  if (s == "baseline") return Ablation::baseline;
  if (s == "cpm") return Ablation::cpm;
  if (s == "cpm+cmmd") return Ablation::cpm_cmmd;
  throw ContractViolation("unknown ablation: " + s +
                          " (expected baseline|cpm|cpm+cmmd)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::baseline: return "baseline";
    case Ablation::cpm: return "cpm";
    default: return "cpm+cmmd";
  }
}

void validate(const TrainConfig& c) {
  require(c.iter_max >= 1, "train: iter_max must be >= 1");
  require(c.batch_labeled >= 1 && c.batch_unlabeled >= 1, "train: empty batch");
  require(c.lr > 0 && c.momentum >= 0 && c.momentum < 1, "train: bad optimizer");
  require(c.ema_alpha >= 0 && c.ema_alpha <= 1, "train: ema_alpha in [0,1]");
  require(c.cmmd.refresh_interval >= 1, "train: refresh_interval must be >= 1");
  require(c.cmmd.bank_size > c.cmmd.hdbscan.min_samples,
          "train: bank_size must exceed hdbscan min_samples");
  validate(c.model);
  validate(c.aug);
  validate(c.cmmd.hdbscan);
  for (int l : c.cmmd.layers)
    require(l >= 1 && l <= int(c.model.depth), "train: cmmd layer out of range");
}

DataSplits load_splits(const std::vector<ManifestItem>& manifest) {
  DataSplits d;
  for (const auto& it : manifest) {
    Tensor<float> img = to_unit(read_pgm(it.image));
    if (it.split == "labeled") {
      d.labeled_images.push_back(std::move(img));
      d.labeled_masks.push_back(read_pgm(it.mask));
    } else if (it.split == "unlabeled") {
      d.unlabeled_images.push_back(std::move(img));
      d.unlabeled_domains.push_back(it.domain);
    } else {
      d.test_images.push_back(std::move(img));
      d.test_masks.push_back(read_pgm(it.mask));
      d.test_domains.push_back(it.domain);
    }
  }
  return d;
}

namespace {

Tensor<float> stack_nchw(const std::vector<Tensor<float>>& imgs) {
  require(!imgs.empty(), "stack_nchw: empty batch");
  const std::size_t H = imgs[0].dim(0), W = imgs[0].dim(1);
  Tensor<float> out(Shape{imgs.size(), 1, H, W});
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    require(imgs[i].rank() == 2 && imgs[i].dim(0) == H && imgs[i].dim(1) == W,
            "stack_nchw: inconsistent image sizes");
    std::copy(imgs[i].data(), imgs[i].data() + H * W, out.data() + i * H * W);
  }
  return out;
}

Tensor<std::uint8_t> stack_masks(const std::vector<Tensor<std::uint8_t>>& ms) {
  require(!ms.empty(), "stack_masks: empty batch");
  const std::size_t H = ms[0].dim(0), W = ms[0].dim(1);
  Tensor<std::uint8_t> out(Shape{ms.size(), H, W});
  for (std::size_t i = 0; i < ms.size(); ++i)
    std::copy(ms[i].data(), ms[i].data() + H * W, out.data() + i * H * W);
  return out;
}

Tensor<double> rows_to_f64(const std::deque<std::vector<float>>& rows) {
  require(!rows.empty(), "bank: empty");
  const std::size_t n = rows.size(), d = rows[0].size();
  Tensor<double> out(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = double(rows[i][k]);
  return out;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t digest_records(const std::vector<AnyTensor>& ts) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : ts)
    std::visit(
        [&](const auto& tt) {
          using E = std::remove_cv_t<std::remove_reference_t<decltype(tt[0])>>;
          h = fnv1a(h, tt.data(), tt.size() * sizeof(E));
        },
        t);
  return h;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, Ablation ablation, DataSplits data)
    : cfg_(std::move(cfg)),
      ablation_(ablation),
      data_(std::move(data)),
      net_(cfg_.model) {
  validate(cfg_);
  require(!data_.labeled_images.empty(), "trainer: no labeled data");
  require(!data_.unlabeled_images.empty(), "trainer: no unlabeled data");
  require(data_.labeled_images.size() == data_.labeled_masks.size(),
          "trainer: labeled images/masks mismatch");

  student_ = net_.init_params(cfg_.seed);
  teacher_ = student_;  // exact copy at init
  momentum_.reserve(student_.count());
  for (const auto& t : student_.tensors) momentum_.emplace_back(t.shape());
  banks_.resize(cfg_.model.depth);
  cmmd_state_.resize(cfg_.model.depth);
}

bool Trainer::layer_enabled(std::size_t l) const {
  if (cfg_.cmmd.layers.empty()) return true;
  for (int e : cfg_.cmmd.layers)
    if (std::size_t(e) == l) return true;
  return false;
}

void Trainer::push_bank(std::deque<std::vector<float>>& buf,
                        const Tensor<float>& pooled) {
  const std::size_t n = pooled.dim(0), d = pooled.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    buf.emplace_back(pooled.data() + i * d, pooled.data() + (i + 1) * d);
    if (buf.size() > std::size_t(cfg_.cmmd.bank_size)) buf.pop_front();
    ++counters_.bank_pushes;
  }
}

void Trainer::refresh_clusters(long iter) {
  const std::size_t L = cfg_.model.depth;
  for (std::size_t l = 1; l <= L; ++l) {
    if (!layer_enabled(l)) continue;
    LayerBank& bank = banks_[l - 1];
    LayerCmmdState& st = cmmd_state_[l - 1];
    const std::size_t nu = bank.unlabeled.size();
    const std::size_t nl = bank.labeled.size();
    if (nu <= std::size_t(cfg_.cmmd.hdbscan.min_samples) ||
        nu < std::size_t(cfg_.cmmd.hdbscan.min_cluster_size) || nl < 2) {
      st = LayerCmmdState{};  // not enough evidence yet; layer stays inactive
      continue;
    }

    const Tensor<double> raw_u = rows_to_f64(bank.unlabeled);
    const Tensor<double> raw_l = rows_to_f64(bank.labeled);
    st.stand = fit_standardizer(raw_u);
    const Tensor<double> z = apply_standardizer(st.stand, raw_u);
    const Tensor<double> anchor_z = apply_standardizer(st.stand, raw_l);

    ClusterSet cs = hdbscan(z, cfg_.cmmd.hdbscan);
    ++counters_.hdbscan_runs;

    // sigma over the union of clustered and anchor points
    const std::size_t d = z.dim(1);
    Tensor<double> uni(Shape{z.dim(0) + anchor_z.dim(0), d});
    std::copy(z.data(), z.data() + z.size(), uni.data());
    std::copy(anchor_z.data(), anchor_z.data() + anchor_z.size(),
              uni.data() + z.size());
    st.sigma = median_heuristic_sigma(uni);
    st.centroids = cs.centroids;
    st.anchor = anchor_z.cast<float>();
    st.active = cs.q >= 1;
    st.anchor_yy = st.active ? mmd2_set_term(st.anchor, st.sigma) : 0.0;

    // refresh report row
    json row;
    row["iter"] = iter;
    row["layer"] = l;
    row["q"] = cs.q;
    row["noise"] = cs.noise_count;
    row["sigma"] = st.sigma;
    std::vector<int> sizes(std::size_t(cs.q), 0);
    for (int lab : cs.labels)
      if (lab >= 0) ++sizes[std::size_t(lab)];
    row["cluster_sizes"] = sizes;
    row["bank_unlabeled"] = nu;
    row["bank_labeled"] = nl;
    if (cs.q >= 1) {
      std::vector<double> per_cluster;
      for (int c = 0; c < cs.q; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < cs.labels.size(); ++i)
          if (cs.labels[i] == c) members.push_back(i);
        if (members.size() < 2) {
          per_cluster.push_back(0.0);
          continue;
        }
        Tensor<double> grp(Shape{members.size(), d});
        for (std::size_t i = 0; i < members.size(); ++i)
          std::copy(z.data() + members[i] * d, z.data() + (members[i] + 1) * d,
                    grp.data() + i * d);
        per_cluster.push_back(mmd2_unbiased_value(grp, anchor_z, st.sigma));
      }
      row["cluster_mmd2"] = per_cluster;
      std::vector<std::size_t> keep;
      std::vector<int> keep_labels;
      for (std::size_t i = 0; i < cs.labels.size(); ++i)
        if (cs.labels[i] >= 0) {
          keep.push_back(i);
          keep_labels.push_back(cs.labels[i]);
        }
      Tensor<double> zc(Shape{keep.size(), d});
      for (std::size_t i = 0; i < keep.size(); ++i)
        std::copy(z.data() + keep[i] * d, z.data() + (keep[i] + 1) * d,
                  zc.data() + i * d);
      Silhouette sil = silhouette(zc, keep_labels);
      if (sil.defined)
        row["silhouette"] = sil.value;
      else
        row["silhouette"] = nullptr;
    }
    cluster_report_rows_.push_back(row.dump());
  }
}

LossReport Trainer::step(long iter) {
  require(iter == iter_, "step: expected iteration " + std::to_string(iter_));
  require(iter < cfg_.iter_max, "step: past iter_max");
  const std::size_t U = std::size_t(cfg_.batch_unlabeled);
  const std::size_t B = std::size_t(cfg_.batch_labeled);
  const std::size_t L = cfg_.model.depth;
  const std::size_t C = cfg_.model.num_classes;
  const std::uint64_t uit = std::uint64_t(iter);

  // ---- (1) batches and augmentation
  Rng rb = Rng::keyed(cfg_.seed, {rng_stream::kBatch, uit});
  std::vector<Tensor<float>> x_w_l(B);
  std::vector<Tensor<std::uint8_t>> y_w_l(B);
  std::vector<std::size_t> lab_idx(B);
  for (std::size_t j = 0; j < B; ++j)
    lab_idx[j] = std::size_t(
        rb.uniform_int(0, std::int64_t(data_.labeled_images.size()) - 1));
  std::vector<std::size_t> unl_idx(U);
  for (std::size_t i = 0; i < U; ++i)
    unl_idx[i] = std::size_t(
        rb.uniform_int(0, std::int64_t(data_.unlabeled_images.size()) - 1));

  std::vector<Tensor<float>> x_w_u(U), x_s_u(U);
  for (std::size_t i = 0; i < U; ++i) {
    Rng rw = Rng::keyed(cfg_.seed, {rng_stream::kWeakAug, uit, i});
    x_w_u[i] = weak_augment(data_.unlabeled_images[unl_idx[i]], cfg_.aug, rw);
    Rng rs = Rng::keyed(cfg_.seed, {rng_stream::kStrongAug, uit, i});
    x_s_u[i] = strong_augment(x_w_u[i], cfg_.aug, rs);
  }
  for (std::size_t j = 0; j < B; ++j) {
    Rng rw = Rng::keyed(cfg_.seed, {rng_stream::kWeakAug, uit, U + j});
    const GeomTransform t = draw_geom(cfg_.aug, rw);
    x_w_l[j] = apply_geom(data_.labeled_images[lab_idx[j]], t);
    y_w_l[j] = apply_geom(data_.labeled_masks[lab_idx[j]], t);
  }

  // ---- (2) mixtures (same mask and same weak labeled view on both branches)
  std::vector<Tensor<float>> t_in(U), t_out(U), s_in(U), s_out(U);
  if (cpm_on()) {
    const std::size_t H = x_w_u[0].dim(0), W = x_w_u[0].dim(1);
    for (std::size_t i = 0; i < U; ++i) {
      Rng rm = Rng::keyed(cfg_.seed, {rng_stream::kMask, uit, i});
      const MixMask m = sample_mask(H, W, cfg_.aug, rm);
      const auto& lab = x_w_l[i % B];
      auto weak = cpm_mix(x_w_u[i], lab, m);
      t_in[i] = std::move(weak.x_in);
      t_out[i] = std::move(weak.x_out);
      auto strong = cpm_mix(x_s_u[i], lab, m);
      s_in[i] = std::move(strong.x_in);
      s_out[i] = std::move(strong.x_out);
    }
  } else {
    t_in = x_w_u;
    s_in = x_s_u;
  }

  // ---- (3) teacher forwards, no gradient
  Graph<float> gT(false);
  auto bT = net_.bind(gT, teacher_, false);
  Tensor<float> teacher_in_probs, teacher_out_probs;
  {
    auto fin = net_.forward(gT, bT, gT.constant(stack_nchw(t_in)));
    teacher_in_probs = gT.value(gT.softmax_channel(fin.logits));
    if (cpm_on()) {
      auto fout = net_.forward(gT, bT, gT.constant(stack_nchw(t_out)));
      teacher_out_probs = gT.value(gT.softmax_channel(fout.logits));
    }
  }

  // ---- (4) student forwards
  Graph<float> gS(true);
  auto bS = net_.bind(gS, student_, true);
  auto f_s_in = net_.forward(gS, bS, gS.constant(stack_nchw(s_in)));
  auto p_s_in = gS.softmax_channel(f_s_in.logits);
  Graph<float>::Value p_s_out{};
  if (cpm_on()) {
    auto f_s_out = net_.forward(gS, bS, gS.constant(stack_nchw(s_out)));
    p_s_out = gS.softmax_channel(f_s_out.logits);
  }
  auto f_lab = net_.forward(gS, bS, gS.constant(stack_nchw(x_w_l)));
  auto p_lab = gS.softmax_channel(f_lab.logits);

  // ---- (5) supervised and consistency losses
  const Tensor<float> gt = one_hot<float>(stack_masks(y_w_l), C);
  auto l_sup = sup_loss(gS, p_lab, gt);
  Graph<float>::Value l_in, l_out, l_cpm;
  if (cpm_on()) {
    auto cons = consistency_losses(gS, p_s_in, p_s_out, teacher_in_probs,
                                   teacher_out_probs);
    l_in = cons.l_in;
    l_out = cons.l_out;
    l_cpm = cons.l_cpm;
  } else {
    Tensor<float> pseudo = one_hot<float>(argmax_channel(teacher_in_probs), C);
    l_in = gS.add(dice_loss(gS, p_s_in, pseudo), ce_loss(gS, p_s_in, pseudo));
    l_out = gS.constant_scalar(0.f);
    l_cpm = gS.weighted_sum({l_in, l_out}, {1.0, 1.0});
  }

  // ---- (6) feature-bank pushes (cmmd builds only)
  if (cmmd_on()) {
    auto enc = net_.forward(gT, bT, gT.constant(stack_nchw(x_w_u)), true);
    for (std::size_t l = 1; l <= L; ++l) {
      if (!layer_enabled(l)) continue;
      push_bank(banks_[l - 1].unlabeled, gT.value(enc.pooled[l - 1]));
      push_bank(banks_[l - 1].labeled, gS.value(f_lab.pooled[l - 1]));
    }
  }

  // ---- (7) periodic clustering refresh
  if (cmmd_on() && iter % cfg_.cmmd.refresh_interval == 0) refresh_clusters(iter);

  // ---- (8) per-layer MMD against the anchor
  LossReport rep;
  rep.iter = iter;
  rep.l_mmd.assign(L, 0.0);
  std::vector<MmdLossResult<float>> layer_losses;
  bool any_active = false;
  if (cmmd_on())
    for (std::size_t l = 0; l < L; ++l) any_active |= cmmd_state_[l].active;
  if (any_active) {
    auto enc_s = net_.forward(gS, bS, gS.constant(stack_nchw(x_w_u)), true);
    for (std::size_t l = 1; l <= L; ++l) {
      const LayerCmmdState& st = cmmd_state_[l - 1];
      if (!st.active) continue;
      auto feat = standardize_rows(gS, enc_s.pooled[l - 1], st.stand);
      const DomainAssignment assign =
          assign_pseudo_domain(gS.value(feat).cast<double>(), st.centroids);
      MmdLossResult<float> r =
          mmd_loss(gS, feat, assign, int(st.centroids.size()), st.anchor, st.sigma,
                   st.anchor_yy);
      counters_.mmd_evals += r.eligible;
      if (r.active) rep.l_mmd[l - 1] = double(gS.value(r.loss)[0]);
      layer_losses.push_back(std::move(r));
    }
  }
  auto l_domain = domain_loss(gS, layer_losses, L);

  // ---- (9) ramp and total
  rep.w = ramp_weight({cfg_.iter_max, iter});
  auto l_total = gS.weighted_sum({l_sup, l_cpm, l_domain}, {1.0, rep.w, rep.w});

  rep.l_sup = double(gS.value(l_sup)[0]);
  rep.l_in = double(gS.value(l_in)[0]);
  rep.l_out = double(gS.value(l_out)[0]);
  rep.l_cpm = double(gS.value(l_cpm)[0]);
  rep.l_domain = double(gS.value(l_domain)[0]);
  rep.l_total = double(gS.value(l_total)[0]);
  if (!std::isfinite(rep.l_total))
    throw NumericsError("diverged at iter " + std::to_string(iter) +
                        ": l_sup=" + fmt17(rep.l_sup) + " l_cpm=" + fmt17(rep.l_cpm) +
                        " l_domain=" + fmt17(rep.l_domain));

  // ---- (10) SGD with momentum on the student
  auto grads = gS.backward(l_total);
  for (std::size_t i = 0; i < student_.count(); ++i) {
    const Tensor<float>& g = grads.at(bS.leaves[i].id);
    Tensor<float>& v = momentum_[i];
    Tensor<float>& p = student_.tensors[i];
    const float mu = float(cfg_.momentum), lr = float(cfg_.lr);
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mu * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }

  // ---- (11) EMA teacher
  teacher_ = UNet<float>::ema_update(teacher_, student_, float(cfg_.ema_alpha));

  ++iter_;
  return rep;
}

void Trainer::run(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string csv_path = out_dir + "/train_log.csv";
  const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  std::ofstream csv(csv_path, std::ios::app);
  require(bool(csv), "train: cannot open " + csv_path);
  const std::size_t L = cfg_.model.depth;
  if (fresh) {
    csv << "iter,l_sup,l_in,l_out,l_cpm";
    for (std::size_t l = 1; l <= L; ++l) csv << ",l_mmd" << l;
    csv << ",l_domain,w,l_total\n";
  }
  std::ofstream report(out_dir + "/cluster_report.jsonl", std::ios::app);

  auto write_stats = [&](bool aborted) {
    json s;
    s["ablation"] = to_string(ablation_);
    s["iterations"] = iter_;
    s["aborted"] = aborted;
    s["counters"] = {{"hdbscan_runs", counters_.hdbscan_runs},
                     {"mmd_evals", counters_.mmd_evals},
                     {"bank_pushes", counters_.bank_pushes}};
    atomic_write(out_dir + "/train_stats.json",
                 [&](std::ostream& os) { os << s.dump(2) << "\n"; });
  };

  for (long it = iter_; it < cfg_.iter_max; ++it) {
    LossReport r;
    try {
      r = step(it);
    } catch (const NumericsError&) {
      write_stats(true);
      throw;
    }
    csv << r.iter << "," << fmt17(r.l_sup) << "," << fmt17(r.l_in) << ","
        << fmt17(r.l_out) << "," << fmt17(r.l_cpm);
    for (std::size_t l = 0; l < L; ++l) csv << "," << fmt17(r.l_mmd[l]);
    csv << "," << fmt17(r.l_domain) << "," << fmt17(r.w) << "," << fmt17(r.l_total)
        << "\n";
    csv.flush();
    for (const auto& row : cluster_report_rows_) report << row << "\n";
    if (!cluster_report_rows_.empty()) report.flush();
    cluster_report_rows_.clear();

    if (cfg_.checkpoint_interval > 0 && (it + 1) % cfg_.checkpoint_interval == 0 &&
        it + 1 < cfg_.iter_max) {
      char name[32];
      std::snprintf(name, sizeof(name), "checkpoint_%06ld", it + 1);
      save_checkpoint(out_dir + "/" + name);
    }
  }
  save_checkpoint(out_dir + "/checkpoint_final");
  write_stats(false);
}

void Trainer::save_checkpoint(const std::string& dir) const {
  fs::create_directories(dir);
  std::vector<std::string> names;
  std::vector<AnyTensor> records;
  auto push = [&](const std::string& n, AnyTensor t) {
    names.push_back(n);
    records.push_back(std::move(t));
  };
  for (std::size_t i = 0; i < student_.count(); ++i)
    push("student." + student_.names[i], student_.tensors[i]);
  for (std::size_t i = 0; i < teacher_.count(); ++i)
    push("teacher." + teacher_.names[i], teacher_.tensors[i]);
  for (std::size_t i = 0; i < student_.count(); ++i)
    push("momentum." + student_.names[i], momentum_[i]);

  const std::size_t L = cfg_.model.depth;
  json layer_meta = json::array();
  for (std::size_t l = 1; l <= L; ++l) {
    const LayerBank& bank = banks_[l - 1];
    const LayerCmmdState& st = cmmd_state_[l - 1];
    const std::string suffix = ".L" + std::to_string(l);
    if (!bank.unlabeled.empty())
      push("bank_u" + suffix, rows_to_f64(bank.unlabeled).cast<float>());
    if (!bank.labeled.empty())
      push("bank_l" + suffix, rows_to_f64(bank.labeled).cast<float>());
    json m;
    m["layer"] = l;
    m["bank_u"] = bank.unlabeled.size();
    m["bank_l"] = bank.labeled.size();
    m["active"] = st.active;
    if (st.active) {
      m["sigma"] = st.sigma;
      m["anchor_yy"] = st.anchor_yy;
      const std::size_t d = st.stand.mean.size(), q = st.centroids.size();
      Tensor<double> cent(Shape{q, d});
      for (std::size_t c = 0; c < q; ++c)
        std::copy(st.centroids[c].begin(), st.centroids[c].end(),
                  cent.data() + c * d);
      push("cmmd.centroids" + suffix, std::move(cent));
      Tensor<double> mean(Shape{d}), inv_std(Shape{d});
      std::copy(st.stand.mean.begin(), st.stand.mean.end(), mean.data());
      std::copy(st.stand.inv_std.begin(), st.stand.inv_std.end(), inv_std.data());
      push("cmmd.mean" + suffix, std::move(mean));
      push("cmmd.inv_std" + suffix, std::move(inv_std));
      push("cmmd.anchor" + suffix, st.anchor);
    }
    layer_meta.push_back(std::move(m));
  }

  json j;
  j["format"] = 1;
  j["iteration"] = iter_;
  j["ablation"] = to_string(ablation_);
  j["config"] = cfg_;
  j["counters"] = {{"hdbscan_runs", counters_.hdbscan_runs},
                   {"mmd_evals", counters_.mmd_evals},
                   {"bank_pushes", counters_.bank_pushes}};
  j["layers"] = layer_meta;
  j["tensors"] = names;
  char dig[32];
  std::snprintf(dig, sizeof(dig), "%016" PRIx64, digest_records(records));
  j["digest"] = dig;

  write_mdt1_multi(dir + "/tensors.mdt", records);
  atomic_write(dir + "/checkpoint.json",
               [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

Trainer Trainer::load_checkpoint(const std::string& dir, DataSplits data) {
  std::ifstream f(dir + "/checkpoint.json");
  if (!f) throw FormatError("cannot open checkpoint: " + dir + "/checkpoint.json");
  json j = json::parse(f);
  TrainConfig cfg = j.at("config").get<TrainConfig>();
  Trainer t(cfg, ablation_from_string(j.at("ablation").get<std::string>()),
            std::move(data));
  t.iter_ = j.at("iteration").get<long>();
  t.counters_.hdbscan_runs = j.at("counters").at("hdbscan_runs").get<long>();
  t.counters_.mmd_evals = j.at("counters").at("mmd_evals").get<long>();
  t.counters_.bank_pushes = j.at("counters").at("bank_pushes").get<long>();

  const auto names = j.at("tensors").get<std::vector<std::string>>();
  auto records = read_mdt1_multi(dir + "/tensors.mdt", names.size());
  char dig[32];
  std::snprintf(dig, sizeof(dig), "%016" PRIx64, digest_records(records));
  require(j.at("digest").get<std::string>() == dig,
          "checkpoint: tensor digest mismatch in " + dir);

  std::size_t r = 0;
  auto next_f32 = [&](const std::string& expect) {
    require(r < names.size() && names[r] == expect,
            "checkpoint: expected record " + expect);
    return std::get<Tensor<float>>(std::move(records[r++]));
  };
  auto next_f64 = [&](const std::string& expect) {
    require(r < names.size() && names[r] == expect,
            "checkpoint: expected record " + expect);
    return std::get<Tensor<double>>(std::move(records[r++]));
  };
  for (std::size_t i = 0; i < t.student_.count(); ++i)
    t.student_.tensors[i] = next_f32("student." + t.student_.names[i]);
  for (std::size_t i = 0; i < t.teacher_.count(); ++i)
    t.teacher_.tensors[i] = next_f32("teacher." + t.teacher_.names[i]);
  for (std::size_t i = 0; i < t.student_.count(); ++i)
    t.momentum_[i] = next_f32("momentum." + t.student_.names[i]);

  for (const auto& m : j.at("layers")) {
    const std::size_t l = m.at("layer").get<std::size_t>();
    const std::string suffix = ".L" + std::to_string(l);
    LayerBank& bank = t.banks_[l - 1];
    if (m.at("bank_u").get<std::size_t>() > 0) {
      Tensor<float> bu = next_f32("bank_u" + suffix);
      for (std::size_t i = 0; i < bu.dim(0); ++i)
        bank.unlabeled.emplace_back(bu.data() + i * bu.dim(1),
                                    bu.data() + (i + 1) * bu.dim(1));
    }
    if (m.at("bank_l").get<std::size_t>() > 0) {
      Tensor<float> bl = next_f32("bank_l" + suffix);
      for (std::size_t i = 0; i < bl.dim(0); ++i)
        bank.labeled.emplace_back(bl.data() + i * bl.dim(1),
                                  bl.data() + (i + 1) * bl.dim(1));
    }
    LayerCmmdState& st = t.cmmd_state_[l - 1];
    st.active = m.at("active").get<bool>();
    if (st.active) {
      st.sigma = m.at("sigma").get<double>();
      st.anchor_yy = m.at("anchor_yy").get<double>();
      Tensor<double> cent = next_f64("cmmd.centroids" + suffix);
      st.centroids.assign(cent.dim(0), std::vector<double>(cent.dim(1)));
      for (std::size_t c = 0; c < cent.dim(0); ++c)
        std::copy(cent.data() + c * cent.dim(1), cent.data() + (c + 1) * cent.dim(1),
                  st.centroids[c].begin());
      Tensor<double> mean = next_f64("cmmd.mean" + suffix);
      Tensor<double> inv_std = next_f64("cmmd.inv_std" + suffix);
      st.stand.mean.assign(mean.data(), mean.data() + mean.size());
      st.stand.inv_std.assign(inv_std.data(), inv_std.data() + inv_std.size());
      st.anchor = next_f32("cmmd.anchor" + suffix);
    }
  }
  require(r == names.size(), "checkpoint: unread records remain");
  return t;
}

// ---- evaluation ------------------------------------------------------

MetricsReport evaluate(const UNetConfig& mc, const ModelParams<float>& params,
                       const DataSplits& data) {
  require(!data.test_images.empty(), "evaluate: empty test set");
  UNet<float> net(mc);

  struct Acc {
    int items = 0, surf_items = 0;
    double dc = 0, jc = 0, hd = 0, asd = 0;
  };
  std::map<int, Acc> by_domain;

  for (std::size_t i = 0; i < data.test_images.size(); ++i) {
    Graph<float> g(false);
    auto b = net.bind(g, params, false);
    auto out = net.forward(g, b, g.constant(stack_nchw({data.test_images[i]})));
    const Tensor<std::uint8_t> pred = argmax_channel(g.value(out.logits));
    const Tensor<std::uint8_t>& gt = data.test_masks[i];
    const std::size_t HW = gt.size();

    double dc = 0, jc = 0, hd = 0, asd = 0;
    int surf_classes = 0;
    const int C = int(mc.num_classes);
    for (int c = 1; c < C; ++c) {
      Tensor<std::uint8_t> pm(gt.shape()), gm(gt.shape());
      for (std::size_t p = 0; p < HW; ++p) {
        pm[p] = pred[p] == std::uint8_t(c);
        gm[p] = gt[p] == std::uint8_t(c);
      }
      const DiceJaccard dj = dice_jaccard(pm, gm);
      dc += dj.dc;
      jc += dj.jc;
      const SurfaceDistances sd = surface_distances(pm, gm);
      if (sd.defined) {
        hd += sd.hd;
        asd += sd.asd;
        ++surf_classes;
      }
    }
    Acc& a = by_domain[data.test_domains[i]];
    ++a.items;
    a.dc += dc / double(C - 1);
    a.jc += jc / double(C - 1);
    if (surf_classes > 0) {
      ++a.surf_items;
      a.hd += hd / double(surf_classes);
      a.asd += asd / double(surf_classes);
    }
  }

  MetricsReport rep;
  int surf_domains = 0;
  for (const auto& [dom, a] : by_domain) {
    EvalRow row;
    row.domain = dom;
    row.items = a.items;
    row.dc = a.dc / a.items;
    row.jc = a.jc / a.items;
    row.surf_items = a.surf_items;
    if (a.surf_items > 0) {
      row.hd = a.hd / a.surf_items;
      row.asd = a.asd / a.surf_items;
    }
    rep.macro.items += row.items;
    rep.macro.dc += row.dc;
    rep.macro.jc += row.jc;
    if (row.surf_items > 0) {
      rep.macro.hd += row.hd;
      rep.macro.asd += row.asd;
      rep.macro.surf_items += row.surf_items;
      ++surf_domains;
    }
    rep.per_domain.push_back(row);
  }
  const double nd = double(rep.per_domain.size());
  rep.macro.dc /= nd;
  rep.macro.jc /= nd;
  if (surf_domains > 0) {
    rep.macro.hd /= surf_domains;
    rep.macro.asd /= surf_domains;
  }
  return rep;
}

namespace {
std::string eval_row_csv(const char* name, const EvalRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f,%.4f,%.4f\n", name, r.items,
                r.dc, r.jc, r.hd, r.asd);
  return buf;
}
}  // namespace

std::string metrics_to_csv(const MetricsReport& r) {
  std::string out = "domain,items,dc,jc,hd,asd\n";
  for (const auto& row : r.per_domain)
    out += eval_row_csv(("D" + std::to_string(row.domain)).c_str(), row);
  out += eval_row_csv("avg", r.macro);
  return out;
}

std::string metrics_to_json(const MetricsReport& r) {
  auto row = [](const EvalRow& e) {
    json j;
    j["domain"] = e.domain;
    j["items"] = e.items;
    j["dc"] = e.dc;
    j["jc"] = e.jc;
    if (e.surf_items > 0) {
      j["hd"] = e.hd;
      j["asd"] = e.asd;
    } else {
      j["hd"] = nullptr;
      j["asd"] = nullptr;
    }
    return j;
  };
  json j;
  j["per_domain"] = json::array();
  for (const auto& e : r.per_domain) j["per_domain"].push_back(row(e));
  j["macro"] = row(r.macro);
  return j.dump(2) + "\n";
}

}  // namespace mdseg
