#include <doctest.h>

#include <fstream>
#include <sstream>

#include "moext/errors.hpp"
#include "moext/training.hpp"
#include "support.hpp"

using namespace moext;
using namespace moext::train;

namespace {

constexpr int kSize = 224;  // the reconstructor only maps back to 224

nn::ModelConfig tiny(int classes = 3) {
  auto cfg = nn::ModelConfig::reduced(16);
  cfg.image_size = kSize;
  cfg.num_classes = classes;
  return cfg;
}

struct Small {
  testing::TempDir dir{"train"};
  data::Manifest micro, macro;
  std::vector<Clip> micro_clips, all_clips;

  Small() {
    testing::quiet();
    synth::SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.clips_per_subject = 3;
    cfg.macro_clips_per_subject = 1;
    cfg.seed = 3;
    const auto raw = synth::generate_synthetic_dataset(cfg, dir / "raw");
    data::PreprocessOptions opt;
    opt.size = kSize;
    opt.landmarks = data::load_landmarks(dir / "raw" / "landmarks.json");
    micro = data::preprocess_manifest(raw.micro, dir / "micro", opt).manifest;
    macro = data::preprocess_manifest(raw.macro, dir / "macro", opt).manifest;
    TrainConfig tc;
    micro_clips = load_clips(micro, tc.macro_pseudo_apex_n, kSize);
    all_clips = pretrain_set(tc, {micro, macro}, kSize);
  }
};

Small& data_set() {
  static Small s;
  return s;
}

TrainConfig pre_cfg(int epochs = 2) {
  TrainConfig c;
  c.phase = Phase::Pretrain;
  c.epochs = epochs;
  c.batch_size = 3;
  c.learning_rate = 1e-3;
  c.seed = 17;
  return c;
}

TrainConfig fine_cfg(int epochs = 2) {
  TrainConfig c;
  c.phase = Phase::Finetune;
  c.epochs = epochs;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.seed = 23;
  c.augment = false;
  return c;
}

std::vector<double> totals(const Checkpoint& c) {
  std::vector<double> v;
  for (const auto& r : c.history) v.push_back(r.total + r.ce);
  return v;
}

}  // namespace

TEST_CASE("config validation and json") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.batch_size == 20);
  CHECK(c.epochs == 30);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.adam_beta1 == 0.9);
  CHECK(c.macro_pseudo_apex_n == 5);
  for (auto bad : {+[](TrainConfig& t) { t.batch_size = 0; }, +[](TrainConfig& t) { t.epochs = 0; },
                   +[](TrainConfig& t) { t.learning_rate = 0; }, +[](TrainConfig& t) { t.adam_beta1 = 1.0; }}) {
    TrainConfig t;
    bad(t);
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }
  c.ablation.use_ss_loss = false;
  c.seed = 99;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.ablation == c.ablation);
}

TEST_CASE("pretrain set: macro clips follow the ablation switch") {
  auto& d = data_set();
  auto cfg = pre_cfg();
  CHECK(pretrain_set(cfg, {d.micro, d.macro}, kSize).size() == d.micro.samples.size() + d.macro.samples.size());
  cfg.ablation.use_macro_data = false;
  const auto only = pretrain_set(cfg, {d.micro, d.macro}, kSize);
  CHECK(only.size() == d.micro.samples.size());
  for (const auto& c : only) CHECK_FALSE(c.is_macro);
  // macro apex comes from the pseudo-apex rule
  for (const auto& c : d.all_clips)
    if (c.is_macro) CHECK(c.apex.vec() != c.onset.vec());
}

TEST_CASE("pretrain is reproducible and records every epoch") {
  auto& d = data_set();
  const auto a = pretrain(pre_cfg(), tiny(), d.all_clips);
  const auto b = pretrain(pre_cfg(), tiny(), d.all_clips);
  REQUIRE(a.history.size() == 2);
  CHECK(a.history == b.history);
  CHECK(a.state == b.state);
  CHECK(a.phase == Phase::Pretrain);
  CHECK(a.epoch == 2);
  for (const auto& r : a.history) {
    CHECK(std::isfinite(r.total));
    CHECK(r.total == doctest::Approx(r.l_re + 0.5 * r.l_st + 1.0 * r.l_ss));
  }
  auto other = pre_cfg();
  other.seed = 18;
  CHECK(pretrain(other, tiny(), d.all_clips).history != a.history);
}

TEST_CASE("ablations change the pretrain trace") {
  auto& d = data_set();
  const auto base = pretrain(pre_cfg(), tiny(), d.all_clips);
  auto no_st = pre_cfg();
  no_st.ablation.use_st_loss = false;
  auto no_ss = pre_cfg();
  no_ss.ablation.use_ss_loss = false;
  auto no_motion = pre_cfg();
  no_motion.ablation.use_motion_extractor = false;
  for (const auto* cfg : {&no_st, &no_ss, &no_motion}) {
    const auto run = pretrain(*cfg, tiny(), d.all_clips);
    CHECK(totals(run) != totals(base));
  }
  const auto st_off = pretrain(no_st, tiny(), d.all_clips);
  for (const auto& r : st_off.history) CHECK(r.total == doctest::Approx(r.l_re + r.l_ss));
}

TEST_CASE("a trailing batch of one is merged") {
  auto& d = data_set();
  auto cfg = pre_cfg(1);
  cfg.batch_size = 4;
  std::vector<Clip> five(d.micro_clips.begin(), d.micro_clips.begin() + 5);
  const auto run = pretrain(cfg, tiny(), five);
  CHECK(std::isfinite(run.history.at(0).total));
}

TEST_CASE("finetune") {
  auto& d = data_set();
  const auto pre = pretrain(pre_cfg(1), tiny(), d.all_clips);

  SUBCASE("reproducible, finetune phase, smaller network") {
    const auto a = finetune(fine_cfg(), &pre, tiny(), d.micro_clips);
    const auto b = finetune(fine_cfg(), &pre, tiny(), d.micro_clips);
    CHECK(a.history == b.history);
    CHECK(a.state == b.state);
    CHECK(a.phase == Phase::Finetune);
    CHECK(a.state.size() < pre.state.size());
    for (const auto& [name, arr] : a.state) CHECK(name.rfind("texture_branch", 0) != 0);
    for (const auto& r : a.history) {
      CHECK(r.train_acc >= 0.0);
      CHECK(r.train_acc <= 1.0);
    }
    auto net = classifier_from(a);
    const auto pred = predict(*net, d.micro_clips);
    CHECK(pred.size() == d.micro_clips.size());
    CHECK(predict(*net, d.micro_clips, 2) == pred);
  }
  SUBCASE("with augmentation the set is ten times larger but still runs") {
    auto cfg = fine_cfg(1);
    cfg.augment = true;
    CHECK(std::isfinite(finetune(cfg, &pre, tiny(), d.micro_clips).history.at(0).ce));
  }
  SUBCASE("use_pretrained changes the starting point") {
    auto cold = fine_cfg();
    cold.ablation.use_pretrained = false;
    const double warm_loss = initial_finetune_loss(fine_cfg(), &pre, tiny(), d.micro_clips);
    const double cold_loss = initial_finetune_loss(cold, nullptr, tiny(), d.micro_clips);
    CHECK(warm_loss != cold_loss);
    CHECK(std::isfinite(warm_loss));
    CHECK(totals(finetune(cold, nullptr, tiny(), d.micro_clips)) !=
          totals(finetune(fine_cfg(), &pre, tiny(), d.micro_clips)));
  }
  SUBCASE("without the motion extractor the classifier reads |S_a - S_o|") {
    auto cfg = fine_cfg();
    cfg.ablation.use_motion_extractor = false;
    auto pre_cfg_nm = pre_cfg(1);
    pre_cfg_nm.ablation.use_motion_extractor = false;
    const auto pre_nm = pretrain(pre_cfg_nm, tiny(), d.all_clips);
    const auto run = finetune(cfg, &pre_nm, tiny(), d.micro_clips);
    CHECK_FALSE(run.model.use_motion_extractor);
    for (const auto& [name, arr] : run.state) CHECK(name.rfind("motion.", 0) != 0);
    // E and |S_a - S_o| are both d wide, so the classifier keeps its shape
    CHECK(run.state.at("classifier.fc.weight").shape.w == tiny().feature_dim);
    CHECK(totals(run) != totals(finetune(fine_cfg(), &pre, tiny(), d.micro_clips)));
    CHECK(predict(*classifier_from(run), d.micro_clips).size() == d.micro_clips.size());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(finetune(fine_cfg(), &pre, tiny(), std::vector<Clip>{}), ConfigError);
    CHECK_THROWS_AS(pretrain(pre_cfg(), tiny(), std::vector<Clip>{}), ConfigError);
    CHECK_THROWS_AS(finetune(fine_cfg(), &pre, tiny(2), d.micro_clips), ConfigError);
    CHECK_THROWS_AS(finetune(fine_cfg(), &pre, tiny(4), d.micro), ConfigError);
    CHECK_THROWS_AS(finetune(fine_cfg(), nullptr, tiny(), d.micro_clips), ConfigError);
    const auto fine = finetune(fine_cfg(1), &pre, tiny(), d.micro_clips);
    CHECK_THROWS_AS(finetune(fine_cfg(), &fine, tiny(), d.micro_clips), ConfigError);
    CHECK_THROWS_AS(classifier_from(pre), ConfigError);
    CHECK_THROWS_AS(load_clips(d.micro, 5, 112), ShapeError);
  }
}

TEST_CASE("hooks and history csv") {
  auto& d = data_set();
  testing::TempDir dir("hooks");
  Hooks hooks;
  std::vector<int> epochs;
  hooks.on_epoch = [&](const EpochRecord& r) { epochs.push_back(r.epoch); };
  hooks.last_good = dir / "last.ckpt";
  const auto run = pretrain(pre_cfg(2), tiny(), d.all_clips, hooks);
  CHECK(epochs == std::vector<int>{1, 2});
  CHECK(load_checkpoint(dir / "last.ckpt") == run);

  write_history_csv(run.history, Phase::Pretrain, dir / "pre.csv");
  std::ifstream in(dir / "pre.csv");
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "epoch,l_re,l_st,l_ss,total");
  int rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  CHECK(rows == 2);

  const auto pre = pretrain(pre_cfg(1), tiny(), d.all_clips);
  const auto fine = finetune(fine_cfg(1), &pre, tiny(), d.micro_clips);
  write_history_csv(fine.history, Phase::Finetune, dir / "fine.csv");
  std::ifstream fin(dir / "fine.csv");
  std::getline(fin, header);
  CHECK(header == "epoch,ce,train_acc");
}

TEST_CASE("a diverging run stops with the last good state on disk") {
  auto& d = data_set();
  testing::TempDir dir("diverge");
  auto cfg = pre_cfg(6);
  cfg.learning_rate = 1e30;
  Hooks hooks;
  hooks.last_good = dir / "last.ckpt";
  try {
    pretrain(cfg, tiny(), d.all_clips, hooks);
    MESSAGE("run stayed finite");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("last good state") != std::string::npos);
    if (std::filesystem::exists(dir / "last.ckpt")) {
      const auto last = load_checkpoint(dir / "last.ckpt");
      for (const auto& r : last.history) CHECK(std::isfinite(r.total));
    }
  }
}
