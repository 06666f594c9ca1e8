#include "moext/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "moext/augment.hpp"
#include "moext/optim.hpp"
#include "moext/rng.hpp"

namespace moext::train {

using losses::Matrix;
using Net = nn::MoExtNet<float>;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw ConfigError("Adam coefficients must lie in [0, 1)");
  if (macro_pseudo_apex_n < 1) throw ConfigError("macro_pseudo_apex_n must be >= 1");
  loss.validate();
  if (phase == Phase::Pretrain && loss.m < 2) throw ConfigError("pre-training needs m >= 2");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"phase", to_string(phase)},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"seed", seed},
          {"loss", {{"epsilon", loss.epsilon}, {"alpha_st", loss.alpha_st}, {"alpha_ss", loss.alpha_ss}, {"m", loss.m}}},
          {"ablation",
           {{"use_pretrained", ablation.use_pretrained},
            {"use_macro_data", ablation.use_macro_data},
            {"use_motion_extractor", ablation.use_motion_extractor},
            {"use_st_loss", ablation.use_st_loss},
            {"use_ss_loss", ablation.use_ss_loss}}},
          {"macro_pseudo_apex_n", macro_pseudo_apex_n},
          {"augment", augment}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.phase = parse_phase(j.at("phase").get<std::string>());
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& l = j.at("loss");
    c.loss.epsilon = l.at("epsilon").get<double>();
    c.loss.alpha_st = l.at("alpha_st").get<double>();
    c.loss.alpha_ss = l.at("alpha_ss").get<double>();
    c.loss.m = l.at("m").get<int>();
    const auto& a = j.at("ablation");
    c.ablation.use_pretrained = a.at("use_pretrained").get<bool>();
    c.ablation.use_macro_data = a.at("use_macro_data").get<bool>();
    c.ablation.use_motion_extractor = a.at("use_motion_extractor").get<bool>();
    c.ablation.use_st_loss = a.at("use_st_loss").get<bool>();
    c.ablation.use_ss_loss = a.at("use_ss_loss").get<bool>();
    c.macro_pseudo_apex_n = j.at("macro_pseudo_apex_n").get<int>();
    c.augment = j.at("augment").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

std::vector<Clip> load_clips(const data::Manifest& manifest, int macro_pseudo_apex_n, int image_size) {
  std::vector<Clip> clips;
  clips.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) {
    Clip c;
    c.onset = load_image(s.frame_paths.at(s.onset_idx));
    const int apex = s.is_macro ? data::resolve_apex(s, macro_pseudo_apex_n) : data::resolve_apex(s);
    c.apex = load_image(s.frame_paths.at(apex));
    for (const auto* img : {&c.onset, &c.apex})
      if (img->h() != image_size || img->w() != image_size)
        throw ShapeError("frame of " + s.subject_id + "/" + s.clip_id + " is " + std::to_string(img->w()) + "x" +
                         std::to_string(img->h()) + ", expected " + std::to_string(image_size) +
                         " (run preprocess first)");
    c.label = manifest.label_index(s.label);
    c.subject_id = s.subject_id;
    c.clip_id = s.clip_id;
    c.is_macro = s.is_macro;
    clips.push_back(std::move(c));
  }
  return clips;
}

std::vector<Clip> pretrain_set(const TrainConfig& cfg, const std::vector<data::Manifest>& manifests,
                               int image_size) {
  std::vector<Clip> out;
  int micro = 0, macro = 0, dropped = 0;
  for (const auto& m : manifests) {
    for (auto& c : load_clips(m, cfg.macro_pseudo_apex_n, image_size)) {
      if (c.is_macro && !cfg.ablation.use_macro_data) {
        ++dropped;
        continue;
      }
      (c.is_macro ? macro : micro) += 1;
      out.push_back(std::move(c));
    }
  }
  spdlog::info("pretrain set: {} micro and {} macro clips ({} macro clips left out)", micro, macro, dropped);
  return out;
}

namespace {

nn::AdamConfig adam_config(const TrainConfig& cfg) {
  return {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, 1e-8, cfg.weight_decay};
}

// Batch boundaries over `count` items; a trailing batch of one is merged into
// the previous batch because batch statistics of a single 1x1 map are degenerate.
std::vector<std::pair<int, int>> batches(int count, int batch_size) {
  std::vector<std::pair<int, int>> out;
  for (int b = 0; b < count; b += batch_size) out.emplace_back(b, std::min(batch_size, count - b));
  if (out.size() > 1 && out.back().second == 1) {
    out.pop_back();
    out.back().second += 1;
  }
  return out;
}

template <typename T>
void copy_row(const Tensor<T>& src, int src_row, Tensor<T>& dst, int dst_row) {
  auto s = src.sample(src_row);
  std::copy(s.begin(), s.end(), dst.sample(dst_row).begin());
}

template <typename T>
Matrix<T> rows_of(const Tensor<T>& t, int begin, int count) {
  const int d = static_cast<int>(t.shape().per_sample());
  Matrix<T> m(count, d);
  for (int r = 0; r < count; ++r)
    for (int k = 0; k < d; ++k) m(r, k) = t(begin + r, k);
  return m;
}

template <typename T>
void put_rows(Tensor<T>& t, int begin, const Matrix<T>& m, T scale) {
  for (int r = 0; r < m.rows(); ++r)
    for (int k = 0; k < m.cols(); ++k) t(begin + r, k) += scale * m(r, k);
}

ObjectiveValue pretrain_step(Net& net, nn::AdamW<float>& opt, const TrainConfig& cfg, const std::vector<Clip>& clips,
                             const std::vector<std::size_t>& order, int begin, int nb, std::uint64_t epoch_seed) {
  const int m = cfg.loss.m;
  std::vector<augment::ExpansionSet> onset_sets, apex_sets;
  for (int i = 0; i < nb; ++i) {
    const auto idx = order[begin + i];
    auto [so, sa] = augment::build_expansion_sets(clips[idx].onset, clips[idx].apex, m, derive_seed(epoch_seed, idx));
    onset_sets.push_back(std::move(so));
    apex_sets.push_back(std::move(sa));
  }
  std::vector<const ImageTensor*> on, ap;
  for (int i = 0; i < nb; ++i)
    for (int j = 0; j < m; ++j) {
      on.push_back(&onset_sets[i].instances[j]);
      ap.push_back(&apex_sets[i].instances[j]);
    }
  const auto r = pretrain_objective(net, stack_images(on), stack_images(ap), nb, cfg.loss, cfg.ablation, true);
  opt.step();
  net.zero_grad();
  return r;
}

void finish_epoch(Checkpoint& ckpt, const EpochRecord& rec, const Net& net, const Hooks& hooks) {
  ckpt.epoch = rec.epoch;
  ckpt.history.push_back(rec);
  ckpt.state = net.state_dict();
  if (hooks.last_good) save_checkpoint(ckpt, *hooks.last_good);
  if (hooks.on_epoch) hooks.on_epoch(rec);
}

}  // namespace

Checkpoint pretrain(const TrainConfig& cfg_in, const nn::ModelConfig& model, const std::vector<Clip>& clips,
                    const Hooks& hooks) {
  TrainConfig cfg = cfg_in;
  cfg.phase = Phase::Pretrain;
  cfg.validate();
  if (clips.empty()) throw ConfigError("pre-training set is empty");
  nn::ModelConfig mc = model;
  mc.use_motion_extractor = cfg.ablation.use_motion_extractor;
  Net net(mc, nn::NetParts::pretrain());
  net.init(cfg.seed);
  nn::AdamW<float> opt(net.state().params, adam_config(cfg));

  Checkpoint ckpt;
  ckpt.phase = Phase::Pretrain;
  ckpt.model = mc;
  ckpt.train_config = cfg.to_json();
  ckpt.seed = cfg.seed;
  ckpt.state = net.state_dict();

  std::vector<std::size_t> order(clips.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, 0x10000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, 0x20000 + static_cast<std::uint64_t>(epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    int seen = 0;
    for (auto [begin, nb] : batches(static_cast<int>(clips.size()), cfg.batch_size)) {
      ObjectiveValue l;
      try {
        l = pretrain_step(net, opt, cfg, clips, order, begin, nb, epoch_seed);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + "; last good state is epoch " +
                           std::to_string(ckpt.epoch) +
                           (hooks.last_good ? ", saved at " + hooks.last_good->string() : std::string()) + ")");
      }
      rec.l_re += l.l_re * nb;
      rec.l_st += l.l_st * nb;
      rec.l_ss += l.l_ss * nb;
      rec.total += l.total * nb;
      seen += nb;
    }
    rec.l_re /= seen;
    rec.l_st /= seen;
    rec.l_ss /= seen;
    rec.total /= seen;
    spdlog::info("pretrain epoch {}/{}: l_re {:.5f} l_st {:.5f} l_ss {:.5f} total {:.5f}", epoch, cfg.epochs,
                 rec.l_re, rec.l_st, rec.l_ss, rec.total);
    finish_epoch(ckpt, rec, net, hooks);
  }
  return ckpt;
}

Checkpoint pretrain(const TrainConfig& cfg, const nn::ModelConfig& model, const std::vector<data::Manifest>& manifests,
                    const Hooks& hooks) {
  return pretrain(cfg, model, pretrain_set(cfg, manifests, model.image_size), hooks);
}

namespace {

std::unique_ptr<Net> build_finetune_net(const TrainConfig& cfg, const Checkpoint* pretrained,
                                        const nn::ModelConfig& model) {
  nn::ModelConfig mc = model;
  if (cfg.ablation.use_pretrained) {
    if (!pretrained) throw ConfigError("fine-tuning needs a pre-trained checkpoint (or the use_pretrained ablation)");
    if (pretrained->phase != Phase::Pretrain)
      throw ConfigError("fine-tuning expects a checkpoint from the pretrain phase, got " +
                        to_string(pretrained->phase));
    mc = pretrained->model;
    mc.num_classes = model.num_classes;
  }
  mc.use_motion_extractor = cfg.ablation.use_motion_extractor;
  auto net = std::make_unique<Net>(mc, nn::NetParts::finetune());
  net->init(cfg.seed);
  if (cfg.ablation.use_pretrained) {
    const auto report = net->load_state_dict(pretrained->state);
    int texture = 0, other = 0;
    for (const auto& name : report.ignored) (name.rfind("texture_branch.", 0) == 0 ? texture : other) += 1;
    if (texture > 0)
      spdlog::info("checkpoint texture-branch weights present but ignored ({} tensors)", texture);
    if (other > 0) spdlog::info("{} reconstructor/projector tensors from the checkpoint are not used", other);
    for (const auto& name : report.missing)
      if (name.rfind("classifier.", 0) != 0)
        spdlog::warn("'{}' not in the checkpoint; keeping its fresh initialisation", name);
  }
  return net;
}

void check_labels(const std::vector<Clip>& clips, int num_classes) {
  for (const auto& c : clips)
    if (c.label < 0 || c.label >= num_classes)
      throw ConfigError("class count mismatch: clip " + c.subject_id + "/" + c.clip_id + " has label index " +
                        std::to_string(c.label) + " but the classifier has " + std::to_string(num_classes) +
                        " classes");
}

}  // namespace

Checkpoint finetune(const TrainConfig& cfg_in, const Checkpoint* pretrained, const nn::ModelConfig& model,
                    const std::vector<Clip>& clips, const Hooks& hooks) {
  TrainConfig cfg = cfg_in;
  cfg.phase = Phase::Finetune;
  cfg.validate();
  if (clips.empty()) throw ConfigError("fine-tuning set is empty");
  check_labels(clips, model.num_classes);
  auto net = build_finetune_net(cfg, pretrained, model);
  nn::AdamW<float> opt(net->state().params, adam_config(cfg));

  Checkpoint ckpt;
  ckpt.phase = Phase::Finetune;
  ckpt.model = net->config();
  ckpt.train_config = cfg.to_json();
  ckpt.seed = cfg.seed;
  ckpt.state = net->state_dict();

  const int factor = cfg.augment ? augment::kAugmentFactor : 1;
  const std::size_t total = clips.size() * factor;
  const std::uint64_t aug_seed = derive_seed(cfg.seed, 0x30000);
  std::vector<std::size_t> order(total);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, 0x40000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    double ce_sum = 0;
    int correct = 0, seen = 0;
    for (auto [begin, nb] : batches(static_cast<int>(total), cfg.batch_size)) {
      std::vector<ImageTensor> on, ap;
      std::vector<int> labels;
      for (int i = 0; i < nb; ++i) {
        const std::size_t item = order[begin + i];
        const std::size_t src = item / factor;
        const int variant = static_cast<int>(item % factor);
        const auto& c = clips[src];
        if (variant == 0) {
          on.push_back(c.onset);
          ap.push_back(c.apex);
        } else {
          auto a = augment::augment_variant({c.onset, c.apex}, src, variant, aug_seed);
          on.push_back(std::move(a.images.onset));
          ap.push_back(std::move(a.images.apex));
        }
        labels.push_back(c.label);
      }
      std::vector<const ImageTensor*> pon, pap;
      for (int i = 0; i < nb; ++i) {
        pon.push_back(&on[i]);
        pap.push_back(&ap[i]);
      }
      const Tensor<float> probs = net->forward_classify(stack_images(pon), stack_images(pap), nn::Mode::Train);
      const auto ce = losses::cross_entropy(probs, labels);
      if (!std::isfinite(ce.value))
        throw NumericError("non-finite cross-entropy at epoch " + std::to_string(epoch) + "; last good state is epoch " +
                           std::to_string(ckpt.epoch));
      if (ce.clamped > 0) spdlog::warn("cross-entropy clamped {} probabilities at the floor", ce.clamped);
      for (int i = 0; i < nb; ++i) {
        int best = 0;
        for (int k = 1; k < probs.c(); ++k)
          if (probs(i, k) > probs(i, best)) best = k;
        correct += best == labels[i];
      }
      net->backward_classify(losses::cross_entropy_grad_logits(probs, labels));
      opt.step();
      net->zero_grad();
      ce_sum += ce.value * nb;
      seen += nb;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.ce = ce_sum / seen;
    rec.train_acc = static_cast<double>(correct) / seen;
    spdlog::info("finetune epoch {}/{}: ce {:.5f} train_acc {:.4f}", epoch, cfg.epochs, rec.ce, rec.train_acc);
    finish_epoch(ckpt, rec, *net, hooks);
  }
  return ckpt;
}

Checkpoint finetune(const TrainConfig& cfg, const Checkpoint* pretrained, const nn::ModelConfig& model,
                    const data::Manifest& micro, const Hooks& hooks) {
  if (static_cast<int>(micro.label_schema.size()) != model.num_classes)
    throw ConfigError("class count mismatch: manifest has " + std::to_string(micro.label_schema.size()) +
                      " classes, model is configured for " + std::to_string(model.num_classes));
  return finetune(cfg, pretrained, model, load_clips(micro, cfg.macro_pseudo_apex_n, model.image_size), hooks);
}

std::unique_ptr<nn::MoExtNet<float>> classifier_from(const Checkpoint& ckpt) {
  if (ckpt.phase != Phase::Finetune) throw ConfigError("inference needs a finetune checkpoint");
  auto net = std::make_unique<Net>(ckpt.model, nn::NetParts::finetune());
  net->init(ckpt.seed);
  const auto report = net->load_state_dict(ckpt.state);
  if (!report.missing.empty()) throw CorruptArchiveError("checkpoint lacks '" + report.missing.front() + "'");
  return net;
}

std::vector<int> predict(nn::MoExtNet<float>& net, const std::vector<Clip>& clips, int batch_size) {
  std::vector<int> out;
  for (std::size_t b = 0; b < clips.size(); b += batch_size) {
    const std::size_t e = std::min(clips.size(), b + batch_size);
    std::vector<const ImageTensor*> on, ap;
    for (std::size_t i = b; i < e; ++i) {
      on.push_back(&clips[i].onset);
      ap.push_back(&clips[i].apex);
    }
    const Tensor<float> probs = net.forward_classify(stack_images(on), stack_images(ap), nn::Mode::Eval);
    for (int i = 0; i < probs.n(); ++i) {
      int best = 0;
      for (int k = 1; k < probs.c(); ++k)
        if (probs(i, k) > probs(i, best)) best = k;
      out.push_back(best);
    }
  }
  return out;
}

double initial_finetune_loss(const TrainConfig& cfg, const Checkpoint* pretrained, const nn::ModelConfig& model,
                             const std::vector<Clip>& clips) {
  if (clips.empty()) throw ConfigError("empty batch");
  check_labels(clips, model.num_classes);
  auto net = build_finetune_net(cfg, pretrained, model);
  const std::size_t n = std::min<std::size_t>(clips.size(), static_cast<std::size_t>(cfg.batch_size));
  std::vector<const ImageTensor*> on, ap;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    on.push_back(&clips[i].onset);
    ap.push_back(&clips[i].apex);
    labels.push_back(clips[i].label);
  }
  const Tensor<float> probs = net->forward_classify(stack_images(on), stack_images(ap), nn::Mode::Train);
  return losses::cross_entropy(probs, labels).value;
}

template <typename T>
ObjectiveValue pretrain_objective(nn::MoExtNet<T>& net, const Tensor<T>& onset, const Tensor<T>& apex, int nb,
                                  const losses::LossConfig& loss, const Ablation& ablation, bool backward) {
  const int m = loss.m;
  const int d = net.config().feature_dim;
  if (onset.n() != nb * m) throw ShapeError("expected " + std::to_string(nb * m) + " instances per frame type");
  auto out = net.forward_pretrain(onset, apex, nn::Mode::Train);
  ObjectiveValue r;
  r.l_re = losses::reconstruction_loss(apex, out.reconstruction);

  // Projector input rows: S in set order (i * 2m + j), then T in the same order, then the anchor.
  const int rows = nb * 2 * m;
  Tensor<T> proj_in(2 * rows + 1, d, 1, 1);
  auto source_row = [m](int row, bool& is_apex) {
    const int set = row / (2 * m), j = row % (2 * m);
    is_apex = j >= m;
    return set * m + (is_apex ? j - m : j);
  };
  for (int row = 0; row < rows; ++row) {
    bool is_apex;
    const int src = source_row(row, is_apex);
    copy_row(is_apex ? out.shape_apex : out.shape_onset, src, proj_in, row);
    copy_row(is_apex ? out.texture_apex : out.texture_onset, src, proj_in, rows + row);
  }
  const losses::RowVector<T> anchor = losses::mean_shape_anchor<T>(rows_of(proj_in, 0, rows));
  for (int k = 0; k < d; ++k) proj_in(2 * rows, k) = anchor(k);

  const Tensor<T> emb = net.project(proj_in);
  const Matrix<T> emb_s = rows_of(emb, 0, rows), emb_t = rows_of(emb, rows, rows);
  const losses::RowVector<T> emb_a = rows_of(emb, 2 * rows, 1).row(0);
  const auto st = losses::st_loss_embedded<T>(emb_s, emb_t, emb_a, nb, m, loss);
  const auto ss = losses::ss_loss_embedded<T>(emb_s, nb, m, loss);
  r.l_st = static_cast<double>(st.value);
  r.l_ss = static_cast<double>(ss.value);
  const bool use_st = ablation.use_st_loss, use_ss = ablation.use_ss_loss;
  r.total = losses::total_pretrain_loss(r.l_re, use_st ? r.l_st : 0.0, use_ss ? r.l_ss : 0.0, loss);
  if (!backward) return r;

  nn::PretrainGrads<T> g;
  g.reconstruction = losses::reconstruction_loss_grad(apex, out.reconstruction);
  if (use_st || use_ss) {
    const T a1 = static_cast<T>(loss.alpha_st), a2 = static_cast<T>(loss.alpha_ss);
    Tensor<T> g_emb(emb.shape());
    if (use_st) {
      put_rows(g_emb, 0, st.grad_shape, a1);
      put_rows(g_emb, rows, st.grad_texture, a1);
      put_rows(g_emb, 2 * rows, Matrix<T>(st.grad_anchor), a1);
    }
    if (use_ss) put_rows(g_emb, 0, ss.grad_shape, a2);
    const Tensor<T> g_in = net.project_backward(g_emb);
    const Shape fs{nb * m, d, 1, 1};
    g.shape_onset = Tensor<T>(fs);
    g.shape_apex = Tensor<T>(fs);
    g.texture_onset = Tensor<T>(fs);
    g.texture_apex = Tensor<T>(fs);
    const T share = T(1) / static_cast<T>(rows);  // d anchor / d each shape row
    for (int row = 0; row < rows; ++row) {
      bool is_apex;
      const int src = source_row(row, is_apex);
      auto& gs = is_apex ? g.shape_apex : g.shape_onset;
      auto& gt = is_apex ? g.texture_apex : g.texture_onset;
      for (int k = 0; k < d; ++k) {
        gs(src, k) = g_in(row, k) + share * g_in(2 * rows, k);
        gt(src, k) = g_in(rows + row, k);
      }
    }
  }
  net.backward_pretrain(g);
  return r;
}

template ObjectiveValue pretrain_objective<float>(nn::MoExtNet<float>&, const Tensor<float>&, const Tensor<float>&,
                                                  int, const losses::LossConfig&, const Ablation&, bool);
template ObjectiveValue pretrain_objective<double>(nn::MoExtNet<double>&, const Tensor<double>&,
                                                   const Tensor<double>&, int, const losses::LossConfig&,
                                                   const Ablation&, bool);

void write_history_csv(const std::vector<EpochRecord>& history, Phase phase, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  if (phase == Phase::Pretrain) {
    out << "epoch,l_re,l_st,l_ss,total\n";
    for (const auto& r : history) out << r.epoch << ',' << r.l_re << ',' << r.l_st << ',' << r.l_ss << ',' << r.total << '\n';
  } else {
    out << "epoch,ce,train_acc\n";
    for (const auto& r : history) out << r.epoch << ',' << r.ce << ',' << r.train_acc << '\n';
  }
}

}  // namespace moext::train
