#include "moext/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "moext/errors.hpp"
#include "moext/rng.hpp"

namespace fs = std::filesystem;

namespace moext::eval {

using data::DatasetId;

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::SDE_CASME2_5: return "SDE_CASME2_5";
    case Protocol::SDE_SAMM_5: return "SDE_SAMM_5";
    case Protocol::SDE_CASME3_3: return "SDE_CASME3_3";
    case Protocol::CDE_3: return "CDE_3";
    case Protocol::SDE_SYNTH: return "SDE_SYNTH";
  }
  return "?";
}

Protocol parse_protocol(std::string_view text) {
  for (auto p : {Protocol::SDE_CASME2_5, Protocol::SDE_SAMM_5, Protocol::SDE_CASME3_3, Protocol::CDE_3,
                 Protocol::SDE_SYNTH})
    if (text == to_string(p)) return p;
  throw ConfigError("unknown protocol '" + std::string(text) + "'");
}

std::vector<DatasetId> protocol_datasets(Protocol p) {
  switch (p) {
    case Protocol::SDE_CASME2_5: return {DatasetId::CASME2};
    case Protocol::SDE_SAMM_5: return {DatasetId::SAMM};
    case Protocol::SDE_CASME3_3: return {DatasetId::CASME3_A};
    case Protocol::CDE_3: return {DatasetId::SMIC_HS, DatasetId::CASME2, DatasetId::SAMM};
    case Protocol::SDE_SYNTH: return {DatasetId::SYNTH};
  }
  return {};
}

std::vector<std::string> protocol_classes(Protocol p) {
  switch (p) {
    case Protocol::SDE_CASME2_5: return {"happiness", "disgust", "repression", "surprise", "others"};
    case Protocol::SDE_SAMM_5: return {"happiness", "anger", "contempt", "surprise", "others"};
    case Protocol::SDE_CASME3_3:
    case Protocol::CDE_3: return {"negative", "positive", "surprise"};
    case Protocol::SDE_SYNTH: return {};  // the manifest's own schema
  }
  return {};
}

int MappedManifest::excluded_total() const {
  int n = 0;
  for (const auto& [label, count] : excluded) n += count;
  return n;
}

namespace {

// Three-class grouping shared by CDE and the CAS(ME)^3 protocol.
std::optional<std::string> three_class(const std::string& label) {
  static const std::set<std::string> negative{"disgust", "repression", "anger", "contempt", "fear", "sadness",
                                              "negative"};
  if (label == "happiness" || label == "positive") return "positive";
  if (label == "surprise") return "surprise";
  if (negative.count(label)) return "negative";
  return std::nullopt;
}

}  // namespace

MappedManifest map_labels(const data::Manifest& manifest, Protocol protocol,
                          const std::optional<std::vector<std::string>>& classes) {
  MappedManifest out;
  out.manifest.dataset = manifest.dataset;
  const bool sde5 = protocol == Protocol::SDE_CASME2_5 || protocol == Protocol::SDE_SAMM_5;
  if (protocol == Protocol::SDE_SYNTH)
    out.manifest.label_schema = manifest.label_schema;
  else if (sde5 && classes)
    for (const auto& c : *classes) out.manifest.label_schema.push_back(data::normalize_label(c));
  else
    out.manifest.label_schema = protocol_classes(protocol);

  for (const auto& s : manifest.samples) {
    std::optional<std::string> target;
    if (protocol == Protocol::CDE_3 || protocol == Protocol::SDE_CASME3_3)
      target = three_class(s.label);
    else if (out.manifest.label_index(s.label) >= 0)
      target = s.label;
    if (!target) {
      out.excluded[s.label] += 1;
      continue;
    }
    auto copy = s;
    copy.label = *target;
    out.manifest.samples.push_back(std::move(copy));
  }
  return out;
}

std::vector<Split> loso_splits(const data::Manifest& manifest) {
  const auto subjects = manifest.subjects();
  if (subjects.size() < 2)
    throw ConfigError("leave-one-subject-out needs at least 2 subjects, got " + std::to_string(subjects.size()));
  std::vector<Split> out;
  for (const auto& test : subjects) {
    Split s;
    s.test_subject = test;
    for (const auto& other : subjects)
      if (other != test) s.train_subjects.push_back(other);
    out.push_back(std::move(s));
  }
  return out;
}

std::string subject_key(DatasetId dataset, const std::string& subject) {
  return data::to_string(dataset) + "/" + subject;
}

void ProtocolConfig::validate() const {
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (exclude_test_subjects_from_pretrain && pretrained_checkpoint)
    throw ConfigError("a shared pre-trained checkpoint cannot exclude the test subject of each fold");
  pretrain.validate();
  finetune.validate();
}

nlohmann::json ProtocolConfig::to_json() const {
  auto pre = pretrain.to_json();
  auto fine = finetune.to_json();
  nlohmann::json j{{"protocol", to_string(protocol)},
                   {"model", model.to_json()},
                   {"pretrain", pre},
                   {"finetune", fine},
                   {"ablation",
                    {{"use_pretrained", ablation.use_pretrained},
                     {"use_macro_data", ablation.use_macro_data},
                     {"use_motion_extractor", ablation.use_motion_extractor},
                     {"use_st_loss", ablation.use_st_loss},
                     {"use_ss_loss", ablation.use_ss_loss}}},
                   {"exclude_test_subjects_from_pretrain", exclude_test_subjects_from_pretrain},
                   {"pretrained_checkpoint", pretrained_checkpoint ? pretrained_checkpoint->string() : ""}};
  if (classes) j["classes"] = *classes;
  return j;
}

namespace {

const data::Manifest* find_manifest(const std::vector<data::Manifest>& list, DatasetId id) {
  for (const auto& m : list)
    if (m.dataset == id) return &m;
  return nullptr;
}

void rekey(data::Sample& s) { s.subject_id = subject_key(s.dataset, s.subject_id); }

}  // namespace

EvaluationSet evaluation_set(const ProtocolConfig& cfg, const ProtocolData& data) {
  std::vector<std::string> missing;
  for (auto id : protocol_datasets(cfg.protocol))
    if (!find_manifest(data.micro, id)) missing.push_back(data::to_string(id));
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingDatasetError("protocol " + to_string(cfg.protocol) + " is missing manifests for: " + list);
  }
  EvaluationSet out;
  bool first = true;
  for (auto id : protocol_datasets(cfg.protocol)) {
    auto mapped = map_labels(*find_manifest(data.micro, id), cfg.protocol, cfg.classes);
    if (first) {
      out.manifest.dataset = id;
      out.manifest.label_schema = mapped.manifest.label_schema;
      first = false;
    }
    for (auto& s : mapped.manifest.samples) {
      rekey(s);
      out.manifest.samples.push_back(std::move(s));
    }
    out.excluded[data::to_string(id)] = mapped.excluded;
    if (mapped.excluded_total() > 0)
      spdlog::info("{}: {} samples without a {} class left out", data::to_string(id), mapped.excluded_total(),
                   to_string(cfg.protocol));
  }
  if (out.manifest.label_schema.empty()) throw SchemaError("protocol has no classes");
  data::validate_manifest(out.manifest);
  return out;
}

data::Manifest pretrain_pool(const ProtocolConfig& cfg, const ProtocolData& data) {
  data::Manifest pool;
  pool.dataset = data.micro.empty() ? DatasetId::SYNTH : data.micro.front().dataset;
  auto append = [&](const data::Manifest& m) {
    for (auto s : m.samples) {
      rekey(s);
      pool.samples.push_back(std::move(s));
    }
  };
  for (const auto& m : data.micro) append(m);
  if (cfg.ablation.use_macro_data)
    for (const auto& m : data.macro) append(m);
  return pool;
}

std::vector<FoldPlan> plan_folds(const ProtocolConfig& cfg, const data::Manifest& eval_set,
                                 const data::Manifest& pool) {
  const bool per_fold = cfg.ablation.use_pretrained && cfg.exclude_test_subjects_from_pretrain;
  std::vector<FoldPlan> plans;
  for (const auto& split : loso_splits(eval_set)) {
    FoldPlan p;
    p.test_subject = split.test_subject;
    for (std::size_t i = 0; i < eval_set.samples.size(); ++i)
      (eval_set.samples[i].subject_id == split.test_subject ? p.test : p.train).push_back(i);
    if (per_fold)
      for (std::size_t i = 0; i < pool.samples.size(); ++i)
        if (pool.samples[i].subject_id != split.test_subject) p.pretrain.push_back(i);

    for (auto i : p.train)
      if (eval_set.samples[i].subject_id == p.test_subject)
        throw ConfigError("subject leakage: " + p.test_subject + " in its own training fold");
    for (auto i : p.pretrain)
      if (pool.samples[i].subject_id == p.test_subject)
        throw ConfigError("subject leakage: " + p.test_subject + " in its own pre-training set");
    plans.push_back(std::move(p));
  }
  return plans;
}

Scores score(const ConfusionMatrix& cm) {
  Scores s;
  s.n = cm.total();
  if (s.n == 0) return s;
  const auto f1 = uf1_detailed(cm);
  const auto rec = uar_detailed(cm);
  s.uf1 = f1.value;
  s.uar = rec.value;
  s.acc = acc(cm);
  s.effective_classes = f1.effective_classes;
  s.warnings = f1.warnings;
  return s;
}

namespace {

std::uint64_t key_hash(const std::string& key) {
  return train::fnv1a(reinterpret_cast<const std::uint8_t*>(key.data()), key.size());
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

void aggregate(Report& report, const data::Manifest& eval_set) {
  report.aggregate = ConfusionMatrix(report.classes);
  for (const auto& f : report.folds) report.aggregate += f.cm;
  report.overall = score(report.aggregate);
  report.per_dataset.clear();
  if (report.protocol != Protocol::CDE_3) return;
  std::map<std::string, const data::Sample*> by_key;
  for (const auto& s : eval_set.samples) by_key[s.subject_id + "\n" + s.clip_id] = &s;
  for (auto id : protocol_datasets(report.protocol)) {
    DatasetScores d;
    d.dataset = data::to_string(id);
    d.cm = ConfusionMatrix(report.classes);
    for (const auto& f : report.folds)
      for (std::size_t k = 0; k < f.truth.size(); ++k)
        if (by_key.at(f.test_subject + "\n" + f.clip_ids[k])->dataset == id) d.cm.add(f.truth[k], f.predicted[k]);
    d.scores = score(d.cm);
    report.per_dataset.push_back(std::move(d));
  }
}

Report run_protocol(const ProtocolConfig& cfg_in, const ProtocolData& data, const std::string& hash) {
  ProtocolConfig cfg = cfg_in;
  cfg.pretrain.ablation = cfg.ablation;
  cfg.finetune.ablation = cfg.ablation;
  cfg.validate();
  const auto eval = evaluation_set(cfg, data);
  const auto& manifest = eval.manifest;
  cfg.model.num_classes = static_cast<int>(manifest.label_schema.size());
  const data::Manifest pool = pretrain_pool(cfg, data);
  const auto plans = plan_folds(cfg, manifest, pool);

  Report report;
  report.protocol = cfg.protocol;
  report.classes = manifest.label_schema;
  report.excluded = eval.excluded;
  report.exclude_test_subjects_from_pretrain = cfg.exclude_test_subjects_from_pretrain;
  report.config = cfg.to_json();
  report.config_hash = hash.empty() ? config_hash(report.config) : hash;

  spdlog::info("{}: {} samples, {} classes, {} folds", to_string(cfg.protocol), manifest.samples.size(),
               report.classes.size(), plans.size());
  const auto clips = train::load_clips(manifest, cfg.finetune.macro_pseudo_apex_n, cfg.model.image_size);

  const bool pretraining = cfg.ablation.use_pretrained;
  const bool per_fold = pretraining && cfg.exclude_test_subjects_from_pretrain;
  std::vector<train::Clip> pool_clips;
  if (per_fold) pool_clips = train::load_clips(pool, cfg.pretrain.macro_pseudo_apex_n, cfg.model.image_size);

  train::Checkpoint shared;
  if (pretraining && !per_fold) {
    if (cfg.pretrained_checkpoint) {
      shared = train::load_checkpoint(*cfg.pretrained_checkpoint);
    } else {
      spdlog::info("pre-training once on {} samples shared by all folds", pool.samples.size());
      shared = train::pretrain(cfg.pretrain, cfg.model,
                               train::load_clips(pool, cfg.pretrain.macro_pseudo_apex_n, cfg.model.image_size));
      report.shared_pretrain_history = shared.history;
    }
  }

  auto run_fold = [&](const FoldPlan& plan) {
    FoldResult r;
    r.test_subject = plan.test_subject;
    r.n_train = plan.train.size();
    r.n_pretrain = plan.pretrain.size();
    const std::uint64_t fold_seed = key_hash(plan.test_subject);
    train::Checkpoint fold_pre;
    const train::Checkpoint* pre = pretraining ? &shared : nullptr;
    if (per_fold) {
      auto pc = cfg.pretrain;
      pc.seed = derive_seed(cfg.pretrain.seed, fold_seed);
      fold_pre = train::pretrain(pc, cfg.model, pick(pool_clips, plan.pretrain));
      r.pretrain_history = fold_pre.history;
      pre = &fold_pre;
    }
    auto fc = cfg.finetune;
    fc.seed = derive_seed(cfg.finetune.seed, fold_seed);
    const auto trained = train::finetune(fc, pre, cfg.model, pick(clips, plan.train));
    r.finetune_history = trained.history;
    auto net = train::classifier_from(trained);
    const auto test = pick(clips, plan.test);
    r.predicted = train::predict(*net, test);
    r.cm = ConfusionMatrix(report.classes);
    for (std::size_t k = 0; k < test.size(); ++k) {
      r.truth.push_back(test[k].label);
      r.clip_ids.push_back(test[k].clip_id);
      r.cm.add(test[k].label, r.predicted[k]);
    }
    const auto s = score(r.cm);
    spdlog::info("fold {}: {} test samples, acc {:.4f}", plan.test_subject, test.size(), s.acc);
    return r;
  };

  report.folds.resize(plans.size());
  for (std::size_t b = 0; b < plans.size(); b += cfg.jobs) {
    const std::size_t e = std::min(plans.size(), b + static_cast<std::size_t>(cfg.jobs));
    if (e - b == 1) {
      report.folds[b] = run_fold(plans[b]);
      continue;
    }
    std::vector<std::future<FoldResult>> running;
    for (std::size_t i = b; i < e; ++i) running.push_back(std::async(std::launch::async, run_fold, plans[i]));
    for (std::size_t i = b; i < e; ++i) report.folds[i] = running[i - b].get();
  }

  aggregate(report, manifest);
  for (const auto& w : report.overall.warnings) spdlog::warn("{}", w);
  spdlog::info("{}: UF1 {:.4f} UAR {:.4f} ACC {:.4f} over {} samples", to_string(cfg.protocol), report.overall.uf1,
               report.overall.uar, report.overall.acc, report.overall.n);
  return report;
}

namespace {

nlohmann::json scores_json(const Scores& s) {
  return {{"uf1", s.uf1}, {"uar", s.uar}, {"acc", s.acc}, {"n_samples", s.n},
          {"effective_classes", s.effective_classes}, {"warnings", s.warnings}};
}

nlohmann::json history_json(const std::vector<train::EpochRecord>& h, bool pre) {
  auto out = nlohmann::json::array();
  for (const auto& r : h) {
    if (pre)
      out.push_back({{"epoch", r.epoch}, {"l_re", r.l_re}, {"l_st", r.l_st}, {"l_ss", r.l_ss}, {"total", r.total}});
    else
      out.push_back({{"epoch", r.epoch}, {"ce", r.ce}, {"train_acc", r.train_acc}});
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const Report& report) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    const auto s = score(f.cm);
    folds.push_back({{"test_subject", f.test_subject},
                     {"clip_ids", f.clip_ids},
                     {"truth", f.truth},
                     {"predicted", f.predicted},
                     {"confusion", f.cm.to_json()},
                     {"acc", s.acc},
                     {"n_train", f.n_train},
                     {"n_pretrain", f.n_pretrain},
                     {"pretrain_history", history_json(f.pretrain_history, true)},
                     {"finetune_history", history_json(f.finetune_history, false)}});
  }
  nlohmann::json per_dataset = nlohmann::json::object();
  for (const auto& d : report.per_dataset)
    per_dataset[d.dataset] = {{"confusion", d.cm.to_json()}, {"metrics", scores_json(d.scores)}};
  return {{"protocol", to_string(report.protocol)},
          {"config_hash", report.config_hash},
          {"config", report.config},
          {"classes", report.classes},
          {"exclude_test_subjects_from_pretrain", report.exclude_test_subjects_from_pretrain},
          {"excluded", report.excluded},
          {"aggregate", {{"confusion", report.aggregate.to_json()}, {"metrics", scores_json(report.overall)}}},
          {"per_dataset", per_dataset},
          {"shared_pretrain_history", history_json(report.shared_pretrain_history, true)},
          {"folds", folds}};
}

void write_summary_csv(const Report& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "protocol,dataset,uf1,uar,acc,n_samples\n";
  const auto p = to_string(report.protocol);
  std::string name;
  if (report.protocol == Protocol::CDE_3) {
    name = "composite";
  } else {
    name = data::to_string(protocol_datasets(report.protocol).front());
  }
  const auto& o = report.overall;
  out << p << ',' << name << ',' << o.uf1 << ',' << o.uar << ',' << o.acc << ',' << o.n << '\n';
  for (const auto& d : report.per_dataset)
    out << p << ',' << d.dataset << ',' << d.scores.uf1 << ',' << d.scores.uar << ',' << d.scores.acc << ','
        << d.scores.n << '\n';
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title) {
  const int c = cm.classes();
  const int cell = 60, left = 110, top = 60;
  const int w = left + c * cell + 20, h = top + c * cell + 70;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  for (int i = 0; i < c; ++i) {
    const long row = cm.true_count(i);
    for (int j = 0; j < c; ++j) {
      const double frac = row > 0 ? static_cast<double>(cm.count(i, j)) / row : 0.0;
      const int shade = static_cast<int>(255 - 200 * frac);
      const int x = left + j * cell, y = top + i * cell;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
        << shade << ',' << shade << ",255)\" stroke=\"#888\"/>\n";
      s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\">"
        << cm.count(i, j) << "</text>\n";
    }
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + i * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << xml_escape(cm.class_names()[i]) << "</text>\n";
    s << "<text x=\"" << left + i * cell + cell / 2 << "\" y=\"" << top + c * cell + 16
      << "\" text-anchor=\"middle\">" << xml_escape(cm.class_names()[i]) << "</text>\n";
  }
  s << "<text x=\"" << left + c * cell / 2 << "\" y=\"" << top + c * cell + 40
    << "\" text-anchor=\"middle\">predicted</text>\n";
  s << "<text x=\"14\" y=\"" << top + c * cell / 2 << "\" transform=\"rotate(-90 14 " << top + c * cell / 2
    << ")\" text-anchor=\"middle\">true</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string fold_bars_svg(const std::vector<FoldResult>& folds, const std::string& title) {
  const int bar = 28, left = 50, top = 40, plot_h = 200;
  const int w = left + static_cast<int>(folds.size()) * bar + 30, h = top + plot_h + 90;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  for (double t : {0.0, 0.5, 1.0}) {
    const int y = top + static_cast<int>(plot_h * (1 - t));
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << w - 20 << "\" y2=\"" << y
      << "\" stroke=\"#ccc\"/>\n<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
      << fmt("%.1f", t) << "</text>\n";
  }
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const double a = folds[i].cm.total() > 0 ? acc(folds[i].cm) : 0.0;
    const int bh = static_cast<int>(plot_h * a);
    const int x = left + static_cast<int>(i) * bar + 4;
    s << "<rect x=\"" << x << "\" y=\"" << top + plot_h - bh << "\" width=\"" << bar - 8 << "\" height=\"" << bh
      << "\" fill=\"#4a7ab5\"><title>" << xml_escape(folds[i].test_subject) << ": " << fmt("%.4f", a)
      << "</title></rect>\n";
    const int lx = x + (bar - 8) / 2, ly = top + plot_h + 10;
    s << "<text x=\"" << lx << "\" y=\"" << ly << "\" transform=\"rotate(60 " << lx << ' ' << ly << ")\">"
      << xml_escape(folds[i].test_subject) << "</text>\n";
  }
  s << "<text x=\"12\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 12 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">fold accuracy</text>\n";
  s << "</svg>\n";
  return s.str();
}

void write_report(const Report& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "report.json", to_json(report).dump(2) + "\n");
  write_summary_csv(report, dir / "summary.csv");
  const auto p = to_string(report.protocol);
  write_text(dir / "confusion.svg", confusion_svg(report.aggregate, p + " aggregate confusion"));
  write_text(dir / "folds.svg", fold_bars_svg(report.folds, p + " per-fold accuracy"));
}

std::string config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(
                    train::fnv1a(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
  return buf;
}

}  // namespace moext::eval
