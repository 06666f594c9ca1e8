#include "moext/model.hpp"

#include <algorithm>
#include <set>

namespace moext::nn {

ModelConfig ModelConfig::reduced(int divisor) {
  if (divisor < 1) throw ConfigError("width divisor must be >= 1");
  ModelConfig cfg;
  auto scale = [divisor](int w) { return std::max(1, w / divisor); };
  for (auto& w : cfg.backbone_widths) w = scale(w);
  cfg.branch_width = scale(cfg.branch_width);
  cfg.feature_dim = scale(cfg.feature_dim);
  for (auto& w : cfg.recon_widths) w = scale(w);
  return cfg;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"backbone_widths", backbone_widths},
          {"branch_width", branch_width},
          {"feature_dim", feature_dim},
          {"recon_widths", recon_widths},
          {"refine_blocks", refine_blocks},
          {"num_classes", num_classes},
          {"image_size", image_size},
          {"use_motion_extractor", use_motion_extractor},
          {"feature_init_gain", feature_init_gain}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.backbone_widths = j.at("backbone_widths").get<std::array<int, 4>>();
    cfg.branch_width = j.at("branch_width").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.recon_widths = j.at("recon_widths").get<std::array<int, 5>>();
    cfg.refine_blocks = j.at("refine_blocks").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.use_motion_extractor = j.at("use_motion_extractor").get<bool>();
    cfg.feature_init_gain = j.value("feature_init_gain", cfg.feature_init_gain);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return cfg;
}

std::vector<Shape> expected_recon_trace(const ModelConfig& cfg) {
  const auto& r = cfg.recon_widths;
  const int s = cfg.image_size;
  return {
      {1, 2 * cfg.feature_dim, 1, 1},
      {1, r[0], 8, 8},
      {1, r[0], 7, 7},
      {1, r[0], s / 16, s / 16},
      {1, r[1], s / 8, s / 8},
      {1, r[2], s / 4, s / 4},
      {1, r[3], s / 2, s / 2},
      {1, r[4], s / 2, s / 2},
      {1, r[4], s, s},
      {1, 3, s, s},
  };
}

namespace {

template <typename T>
std::unique_ptr<Sequential<T>> make_branch(const ModelConfig& cfg) {
  auto branch = std::make_unique<Sequential<T>>();
  branch->add("block", make_conv_block<T>(cfg.backbone_widths[3], cfg.branch_width));
  branch->template emplace<GlobalAvgPool<T>>("pool");
  branch->template emplace<Linear<T>>("fc", cfg.branch_width, cfg.feature_dim);
  return branch;
}

template <typename T>
std::unique_ptr<Sequential<T>> up_conv(int in, int out) {
  auto s = std::make_unique<Sequential<T>>();
  s->template emplace<Upsample2<T>>("up");
  s->template emplace<Conv2d<T>>("conv", in, out, 3);
  s->template emplace<BatchNorm2d<T>>("bn", out);
  s->template emplace<ReLU<T>>("relu");
  return s;
}

template <typename T>
std::unique_ptr<Sequential<T>> make_reconstructor(const ModelConfig& cfg) {
  const auto& r = cfg.recon_widths;
  auto rec = std::make_unique<Sequential<T>>();
  auto expand = std::make_unique<Sequential<T>>();
  int in = 2 * cfg.feature_dim;
  for (int i = 0; i < 3; ++i) {
    expand->add(std::to_string(i), up_conv<T>(in, r[0]));
    in = r[0];
  }
  rec->add("expand", std::move(expand));
  rec->template emplace<AvgPool<T>>("pool", 2, 1);
  rec->add("up0", up_conv<T>(r[0], r[0]));
  rec->add("up1", up_conv<T>(r[0], r[1]));
  rec->add("up2", up_conv<T>(r[1], r[2]));
  rec->add("up3", up_conv<T>(r[2], r[3]));
  auto refine = std::make_unique<Sequential<T>>();
  in = r[3];
  for (int i = 0; i < cfg.refine_blocks; ++i) {
    refine->add(std::to_string(i), make_conv_block<T>(in, r[4]));
    in = r[4];
  }
  rec->add("refine", std::move(refine));
  rec->template emplace<Upsample2<T>>("up_final");
  auto out = std::make_unique<Sequential<T>>();
  out->template emplace<Conv2d<T>>("conv", r[4], 3, 3);
  out->template emplace<ReLU<T>>("relu");
  rec->add("out", std::move(out));
  return rec;
}

template <typename T>
void require_features(const Tensor<T>& x, int dim, const char* what) {
  if (x.c() != dim || x.h() != 1 || x.w() != 1)
    throw ShapeError(std::string(what) + " must be n x " + std::to_string(dim) + " x 1 x 1, got " +
                     x.shape().str());
}

}  // namespace

template <typename T>
MoExtNet<T>::MoExtNet(const ModelConfig& cfg, const NetParts& parts) : cfg_(cfg), parts_(parts) {
  if (parts.classifier && cfg.num_classes < 2)
    throw ConfigError("classifier needs at least 2 classes, got " + std::to_string(cfg.num_classes));
  backbone_ = std::make_unique<Sequential<T>>();
  backbone_->set_label("backbone");
  int in = 3;
  for (int s = 0; s < 4; ++s) {
    auto stage = std::make_unique<Sequential<T>>();
    stage->add("block", make_conv_block<T>(in, cfg.backbone_widths[s]));
    stage->template emplace<MaxPool2<T>>("pool");
    backbone_->add("stage" + std::to_string(s), std::move(stage));
    in = cfg.backbone_widths[s];
  }
  shape_branch_ = make_branch<T>(cfg);
  shape_branch_->set_label("shape_branch");
  if (parts.texture) {
    texture_branch_ = make_branch<T>(cfg);
    texture_branch_->set_label("texture_branch");
  }
  motion_c1_ = make_conv_block<T>(cfg.feature_dim, cfg.feature_dim);
  motion_c1_->set_label("motion.c1");
  motion_c2_ = make_conv_block<T>(2 * cfg.feature_dim, cfg.feature_dim);
  motion_c2_->set_label("motion.c2");
  if (parts.reconstructor) {
    reconstructor_ = make_reconstructor<T>(cfg);
    reconstructor_->set_label("reconstructor");
  }
  if (parts.projector) {
    projector_ = std::make_unique<Sequential<T>>();
    projector_->set_label("projector");
    projector_->template emplace<Linear<T>>("fc1", cfg.feature_dim, cfg.feature_dim);
    projector_->template emplace<ReLU<T>>("relu");
    projector_->template emplace<Linear<T>>("fc2", cfg.feature_dim, cfg.feature_dim);
  }
  if (parts.classifier) {
    classifier_ = std::make_unique<Sequential<T>>();
    classifier_->set_label("classifier");
    classifier_->template emplace<Linear<T>>("fc", cfg.feature_dim, cfg.num_classes);
  }

  backbone_->collect("backbone", refs_);
  shape_branch_->collect("shape_branch", refs_);
  if (texture_branch_) texture_branch_->collect("texture_branch", refs_);
  if (cfg_.use_motion_extractor) {
    motion_c1_->collect("motion.c1", refs_);
    motion_c2_->collect("motion.c2", refs_);
  }
  if (reconstructor_) reconstructor_->collect("reconstructor", refs_);
  if (projector_) projector_->collect("projector", refs_);
  if (classifier_) classifier_->collect("classifier", refs_);
}

template <typename T>
void MoExtNet<T>::init(std::uint64_t seed) {
  // Independent streams per sub-network so that adding or removing a part
  // leaves the others' initial weights unchanged.
  auto init_part = [seed](Sequential<T>* part, std::uint64_t index) {
    if (!part) return;
    Rng rng(derive_seed(seed, index));
    part->init(rng);
  };
  init_part(backbone_.get(), 0);
  init_part(shape_branch_.get(), 1);
  init_part(texture_branch_.get(), 2);
  for (auto* branch : {shape_branch_.get(), texture_branch_.get()}) {
    if (!branch) continue;
    auto& fc = dynamic_cast<Linear<T>&>((*branch)[branch->size() - 1]);
    for (auto& v : fc.weight().vec()) v *= static_cast<T>(cfg_.feature_init_gain);
  }
  init_part(motion_c1_.get(), 3);
  init_part(motion_c2_.get(), 4);
  init_part(reconstructor_.get(), 5);
  init_part(projector_.get(), 6);
  init_part(classifier_.get(), 7);
}

template <typename T>
SeparatedFeatures<T> MoExtNet<T>::separate_features(const Tensor<T>& x, Mode mode) {
  if (x.c() != 3 || x.h() != cfg_.image_size || x.w() != cfg_.image_size)
    throw ShapeError("separator input must be n x 3 x " + std::to_string(cfg_.image_size) + " x " +
                     std::to_string(cfg_.image_size) + ", got " + x.shape().str());
  separated_batch_ = x.n();
  Tensor<T> generic = backbone_->forward(x, mode);
  SeparatedFeatures<T> out;
  out.shape = shape_branch_->forward(generic, mode);
  if (texture_branch_) out.texture = texture_branch_->forward(generic, mode);
  return out;
}

template <typename T>
Tensor<T> MoExtNet<T>::separate_backward(const Tensor<T>& grad_shape, const Tensor<T>* grad_texture) {
  Tensor<T> g = shape_branch_->backward(grad_shape);
  if (grad_texture && !grad_texture->empty()) {
    if (!texture_branch_) throw ArchitectureError("texture gradient given but no texture branch");
    g += texture_branch_->backward(*grad_texture);
  }
  return backbone_->backward(g);
}

template <typename T>
Tensor<T> MoExtNet<T>::extract_motion(const Tensor<T>& shape_onset, const Tensor<T>& shape_apex,
                                      Mode mode) {
  require_features(shape_onset, cfg_.feature_dim, "onset shape features");
  require_features(shape_apex, cfg_.feature_dim, "apex shape features");
  if (shape_onset.n() != shape_apex.n()) throw ShapeError("onset/apex batch sizes differ");
  Tensor<T> delta(shape_onset.shape());
  delta_sign_ = Tensor<T>(shape_onset.shape());
  for (std::size_t k = 0; k < delta.size(); ++k) {
    const T d = shape_apex.data()[k] - shape_onset.data()[k];
    delta.data()[k] = std::abs(d);
    delta_sign_.data()[k] = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
  }
  if (!cfg_.use_motion_extractor) return delta;
  Tensor<T> c1 = motion_c1_->forward(delta, mode);
  return motion_c2_->forward(concat_channels(c1, shape_apex), mode);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> MoExtNet<T>::extract_motion_backward(const Tensor<T>& grad_motion) {
  Tensor<T> grad_delta;
  Tensor<T> grad_apex(delta_sign_.shape());
  if (cfg_.use_motion_extractor) {
    Tensor<T> g = motion_c2_->backward(grad_motion);
    auto [g_c1, g_apex_direct] = split_channels(g, cfg_.feature_dim);
    grad_delta = motion_c1_->backward(g_c1);
    grad_apex = std::move(g_apex_direct);
  } else {
    grad_delta = grad_motion;
  }
  Tensor<T> grad_onset(delta_sign_.shape());
  for (std::size_t k = 0; k < grad_delta.size(); ++k) {
    const T g = grad_delta.data()[k] * delta_sign_.data()[k];
    grad_apex.data()[k] += g;
    grad_onset.data()[k] = -g;
  }
  return {std::move(grad_onset), std::move(grad_apex)};
}

template <typename T>
Tensor<T> MoExtNet<T>::reconstruct_apex(const Tensor<T>& motion, const Tensor<T>& texture_onset,
                                        Mode mode) {
  if (!reconstructor_) throw ArchitectureError("network has no reconstruction module");
  require_features(motion, cfg_.feature_dim, "motion features");
  require_features(texture_onset, cfg_.feature_dim, "onset texture features");
  Tensor<T> joint = concat_channels(motion, texture_onset);
  Tensor<T> image = reconstructor_->forward(joint, mode);

  recon_trace_.clear();
  recon_trace_.push_back(joint.shape());
  for (const auto& s : reconstructor_->output_shapes()) recon_trace_.push_back(s);
  const auto expected = expected_recon_trace(cfg_);
  if (recon_trace_.size() != expected.size())
    throw ArchitectureError("reconstructor trace has " + std::to_string(recon_trace_.size()) +
                            " entries, expected " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    Shape want = expected[i];
    want.n = joint.n();
    if (!(recon_trace_[i] == want))
      throw ArchitectureError("reconstructor stage " + std::to_string(i) + " produced " +
                              recon_trace_[i].chw_str() + ", expected " + want.chw_str());
  }
  return image;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> MoExtNet<T>::reconstruct_backward(const Tensor<T>& grad_image) {
  Tensor<T> g = reconstructor_->backward(grad_image);
  return split_channels(g, cfg_.feature_dim);
}

template <typename T>
Tensor<T> MoExtNet<T>::project(const Tensor<T>& v) {
  if (!projector_) throw ArchitectureError("network has no projection head");
  require_features(v, cfg_.feature_dim, "projector input");
  return projector_->forward(v, Mode::Train);
}

template <typename T>
Tensor<T> MoExtNet<T>::project_backward(const Tensor<T>& grad) {
  return projector_->backward(grad);
}

template <typename T>
Tensor<T> MoExtNet<T>::classify(const Tensor<T>& motion, Mode mode) {
  if (!classifier_) throw ArchitectureError("network has no classifier");
  require_features(motion, cfg_.feature_dim, "classifier input");
  logits_ = classifier_->forward(motion, mode);
  return softmax_rows(logits_);
}

template <typename T>
Tensor<T> MoExtNet<T>::classify_backward(const Tensor<T>& grad_logits) {
  return classifier_->backward(grad_logits);
}

template <typename T>
PretrainOutputs<T> MoExtNet<T>::forward_pretrain(const Tensor<T>& onset, const Tensor<T>& apex,
                                                 Mode mode) {
  if (!(onset.shape() == apex.shape())) throw ShapeError("onset/apex batches differ in shape");
  if (!texture_branch_ || !reconstructor_)
    throw ArchitectureError("pre-training needs the texture branch and the reconstructor");
  const int n = onset.n();
  pair_batch_ = n;
  auto feats = separate_features(concat_batch(onset, apex), mode);
  PretrainOutputs<T> out;
  out.shape_onset = slice_batch(feats.shape, 0, n);
  out.shape_apex = slice_batch(feats.shape, n, n);
  out.texture_onset = slice_batch(feats.texture, 0, n);
  out.texture_apex = slice_batch(feats.texture, n, n);
  out.motion = extract_motion(out.shape_onset, out.shape_apex, mode);
  out.reconstruction = reconstruct_apex(out.motion, out.texture_onset, mode);
  return out;
}

template <typename T>
void MoExtNet<T>::backward_pretrain(const PretrainGrads<T>& grads) {
  const int n = pair_batch_;
  const Shape fshape{n, cfg_.feature_dim, 1, 1};
  Tensor<T> g_so(fshape), g_sa(fshape), g_to(fshape), g_ta(fshape);
  auto add = [](Tensor<T>& acc, const Tensor<T>& g) {
    if (!g.empty()) acc += g;
  };
  add(g_so, grads.shape_onset);
  add(g_sa, grads.shape_apex);
  add(g_to, grads.texture_onset);
  add(g_ta, grads.texture_apex);
  if (!grads.reconstruction.empty()) {
    auto [g_m, g_t] = reconstruct_backward(grads.reconstruction);
    g_to += g_t;
    auto [g_o, g_a] = extract_motion_backward(g_m);
    g_so += g_o;
    g_sa += g_a;
  }
  Tensor<T> g_shape = concat_batch(g_so, g_sa);
  Tensor<T> g_texture = concat_batch(g_to, g_ta);
  separate_backward(g_shape, &g_texture);
}

template <typename T>
Tensor<T> MoExtNet<T>::forward_classify(const Tensor<T>& onset, const Tensor<T>& apex, Mode mode) {
  if (!(onset.shape() == apex.shape())) throw ShapeError("onset/apex batches differ in shape");
  const int n = onset.n();
  pair_batch_ = n;
  // Only the shape branch is evaluated here, even when a texture branch exists.
  separated_batch_ = 2 * n;
  Tensor<T> generic = backbone_->forward(concat_batch(onset, apex), mode);
  Tensor<T> shape = shape_branch_->forward(generic, mode);
  Tensor<T> motion = extract_motion(slice_batch(shape, 0, n), slice_batch(shape, n, n), mode);
  return classify(motion, mode);
}

template <typename T>
void MoExtNet<T>::backward_classify(const Tensor<T>& grad_logits) {
  Tensor<T> g_m = classify_backward(grad_logits);
  auto [g_o, g_a] = extract_motion_backward(g_m);
  Tensor<T> g = shape_branch_->backward(concat_batch(g_o, g_a));
  backbone_->backward(g);
}

template <typename T>
void MoExtNet<T>::zero_grad() {
  for (auto& p : refs_.params) p.grad->fill(T(0));
}

template <typename T>
std::size_t MoExtNet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : refs_.params) total += p.value->size();
  return total;
}

template <typename T>
StateDict MoExtNet<T>::state_dict() const {
  StateDict out;
  auto put = [&out](const std::string& name, const Tensor<T>& t) {
    NamedArray a{t.shape(), std::vector<float>(t.size())};
    for (std::size_t k = 0; k < t.size(); ++k) a.values[k] = static_cast<float>(t.data()[k]);
    out.emplace(name, std::move(a));
  };
  for (const auto& p : refs_.params) put(p.name, *p.value);
  for (const auto& b : refs_.buffers) put(b.name, *b.value);
  return out;
}

template <typename T>
LoadReport MoExtNet<T>::load_state_dict(const StateDict& state) {
  LoadReport report;
  std::set<std::string> used;
  auto take = [&](const std::string& name, Tensor<T>& t) {
    auto it = state.find(name);
    if (it == state.end()) {
      report.missing.push_back(name);
      return;
    }
    if (!(it->second.shape == t.shape()))
      throw ShapeError("parameter '" + name + "' has shape " + it->second.shape.str() +
                       " in snapshot, network expects " + t.shape().str());
    for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = static_cast<T>(it->second.values[k]);
    used.insert(name);
  };
  for (auto& p : refs_.params) take(p.name, *p.value);
  for (auto& b : refs_.buffers) take(b.name, *b.value);
  for (const auto& [name, arr] : state)
    if (!used.count(name)) report.ignored.push_back(name);
  return report;
}

template class MoExtNet<float>;
template class MoExtNet<double>;

}  // namespace moext::nn
