#include "moext/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "moext/errors.hpp"

namespace fs = std::filesystem;

namespace moext::data {

std::string to_string(DatasetId id) {
  switch (id) {
    case DatasetId::CASME2: return "CASME2";
    case DatasetId::SAMM: return "SAMM";
    case DatasetId::SMIC_HS: return "SMIC_HS";
    case DatasetId::CASME3_A: return "CASME3_A";
    case DatasetId::SYNTH: return "SYNTH";
  }
  return "?";
}

DatasetId parse_dataset_id(std::string_view text) {
  for (auto id : {DatasetId::CASME2, DatasetId::SAMM, DatasetId::SMIC_HS, DatasetId::CASME3_A,
                  DatasetId::SYNTH})
    if (text == to_string(id)) return id;
  throw SchemaError("unknown dataset id '" + std::string(text) + "'");
}

std::vector<std::string> native_label_schema(DatasetId id) {
  switch (id) {
    case DatasetId::CASME2:
      return {"happiness", "disgust", "repression", "surprise", "fear", "sadness", "others"};
    case DatasetId::SAMM:
      return {"happiness", "fear", "surprise", "anger", "disgust", "sadness", "contempt", "others"};
    case DatasetId::SMIC_HS: return {"positive", "negative", "surprise"};
    case DatasetId::CASME3_A:
      return {"happiness", "disgust", "fear", "anger", "sadness", "surprise", "others"};
    case DatasetId::SYNTH: return {};
  }
  return {};
}

std::string normalize_label(std::string_view label) {
  std::string out;
  for (char ch : label)
    if (!std::isspace(static_cast<unsigned char>(ch)))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return out;
}

int Manifest::label_index(const std::string& label) const {
  auto it = std::find(label_schema.begin(), label_schema.end(), label);
  return it == label_schema.end() ? -1 : static_cast<int>(it - label_schema.begin());
}

std::vector<std::string> Manifest::subjects() const {
  std::vector<std::string> out;
  for (const auto& s : samples)
    if (std::find(out.begin(), out.end(), s.subject_id) == out.end()) out.push_back(s.subject_id);
  return out;
}

int resolve_apex(const Sample& sample, int macro_pseudo_apex_n) {
  if (sample.frame_paths.empty())
    throw SchemaError("sample " + sample.subject_id + "/" + sample.clip_id + " has no frames");
  if (sample.is_macro) {
    if (macro_pseudo_apex_n < 1) throw ConfigError("pseudo-apex frame number must be >= 1");
    return std::min(sample.onset_idx + macro_pseudo_apex_n - 1, sample.offset_idx);
  }
  if (sample.apex_idx) return *sample.apex_idx;
  return (sample.onset_idx + sample.offset_idx) / 2;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  static const std::set<std::string> kExtensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("frames directory not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (kExtensions.count(ext)) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  return out + "\"";
}

int parse_index(const std::string& text, const std::string& what, int line) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || v < 0)
    throw ParseError("line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, int line) {
  const std::string t = normalize_label(text);
  if (t == "1" || t == "true" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "no") return false;
  throw ParseError("line " + std::to_string(line) + ": bad is_macro '" + text + "'");
}

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

}  // namespace

void validate_manifest(const Manifest& manifest) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& s : manifest.samples) {
    if (manifest.label_index(s.label) < 0)
      throw SchemaError("label '" + s.label + "' of " + s.subject_id + "/" + s.clip_id +
                        " is not in the label schema");
    if (!seen.emplace(s.subject_id, s.clip_id).second)
      throw SchemaError("duplicate (subject, clip) pair " + s.subject_id + "/" + s.clip_id);
  }
}

Manifest load_manifest(const fs::path& path, DatasetId dataset,
                       const std::optional<std::vector<std::string>>& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  Manifest manifest;
  manifest.dataset = dataset;

  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError("line 1: empty manifest");
  ++line_no;
  if (trim(line) != kManifestHeader)
    throw ParseError("line 1: unexpected header, expected '" + std::string(kManifestHeader) + "'");

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv(trim(line));
    if (f.size() != 9)
      throw ParseError("line " + std::to_string(line_no) + ": expected 9 fields, got " +
                       std::to_string(f.size()));
    for (auto& field : f) field = trim(field);
    Sample s;
    try {
      s.dataset = parse_dataset_id(f[0]);
    } catch (const SchemaError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (s.dataset != dataset)
      throw SchemaError("line " + std::to_string(line_no) + ": dataset " + f[0] + " in a " +
                        to_string(dataset) + " manifest");
    s.subject_id = f[1];
    s.clip_id = f[2];
    if (s.subject_id.empty() || s.clip_id.empty())
      throw ParseError("line " + std::to_string(line_no) + ": empty subject or clip id");
    s.frames_dir = (base / f[3]).lexically_normal();
    s.onset_idx = parse_index(f[4], "onset_idx", line_no);
    if (!f[5].empty()) s.apex_idx = parse_index(f[5], "apex_idx", line_no);
    s.offset_idx = parse_index(f[6], "offset_idx", line_no);
    s.label = normalize_label(f[7]);
    s.is_macro = parse_bool(f[8], line_no);

    if (s.onset_idx > s.offset_idx)
      throw ParseError("line " + std::to_string(line_no) + ": onset_idx > offset_idx");
    if (s.apex_idx && (*s.apex_idx < s.onset_idx || *s.apex_idx > s.offset_idx))
      throw ParseError("line " + std::to_string(line_no) + ": apex_idx outside [onset, offset]");
    try {
      s.frame_paths = list_frames(s.frames_dir);
    } catch (const IoError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (s.frame_paths.empty())
      throw ParseError("line " + std::to_string(line_no) + ": no frames in " + s.frames_dir.string());
    if (s.offset_idx >= static_cast<int>(s.frame_paths.size()))
      throw ParseError("line " + std::to_string(line_no) + ": offset_idx " +
                       std::to_string(s.offset_idx) + " beyond " +
                       std::to_string(s.frame_paths.size()) + " frames");
    if (!s.apex_idx) s.apex_idx = resolve_apex(s);
    manifest.samples.push_back(std::move(s));
  }

  if (schema) {
    for (const auto& l : *schema) manifest.label_schema.push_back(normalize_label(l));
  } else if (dataset == DatasetId::SYNTH) {
    std::set<std::string> labels;
    for (const auto& s : manifest.samples) labels.insert(s.label);
    manifest.label_schema.assign(labels.begin(), labels.end());
  } else {
    manifest.label_schema = native_label_schema(dataset);
  }
  validate_manifest(manifest);
  return manifest;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    DatasetId id;
    try {
      id = parse_dataset_id(trim(fields[0]));
    } catch (const SchemaError& e) {
      throw ParseError(std::string("line 2: ") + e.what());
    }
    return load_manifest(path, id);
  }
  throw ParseError("manifest " + path.string() + " has no rows");
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  validate_manifest(manifest);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& s : manifest.samples) {
    const fs::path rel = fs::absolute(s.frames_dir).lexically_proximate(base);
    out << to_string(s.dataset) << ',' << csv_field(s.subject_id) << ',' << csv_field(s.clip_id) << ','
        << csv_field(rel.generic_string()) << ',' << s.onset_idx << ','
        << (s.apex_idx ? std::to_string(*s.apex_idx) : "") << ',' << s.offset_idx << ','
        << csv_field(s.label) << ',' << (s.is_macro ? "true" : "false") << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

}  // namespace moext::data
