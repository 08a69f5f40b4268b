#include "st3d/io.hpp"

#include "binary_io.hpp"
#include "st3d/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace st3d::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFeatureMagic[9] = {'S', 'T', '3', 'D', '-', 'F', 'M', 'A', 'T'};
constexpr const char* kSpotsHeader = "sample_id\tlayer_index\tspot_id\tx\ty\tradius\tknown";

std::ifstream open_in(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string("cannot open ") + what + " " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

double parse_double(const std::string& s, const fs::path& path, std::size_t line, const std::string& column) {
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::out_of_range&) {
    throw DataError(where(path, line) + ": value '" + s + "' out of range in column " + column);
  } catch (const std::exception&) {
    // stod rejects nothing that strtod would accept, but "nan" parses; handled below.
    throw FormatError(where(path, line) + ": cannot parse '" + s + "' in column " + column);
  }
  if (!std::isfinite(v)) {
    throw DataError(where(path, line) + ": non-finite value in column " + column);
  }
  return v;
}

int parse_int(const std::string& s, const fs::path& path, std::size_t line, const std::string& column) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where(path, line) + ": cannot parse integer '" + s + "' in column " + column);
  }
}

json parse_json_file(const fs::path& path, const char* what) {
  auto in = open_in(path, what);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

template <typename T>
T json_field(const json& j, const char* key, const fs::path& path) {
  if (!j.contains(key)) throw FormatError(path.string() + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(path.string() + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_spots_tsv(const SampleStack& stack, const fs::path& path) {
  auto out = open_out(path);
  out << kSpotsHeader << '\n';
  for (const auto& layer : stack.layers) {
    for (const auto& s : layer.spots) {
      out << stack.sample_id << '\t' << s.layer_index << '\t' << s.spot_id << '\t' << format_value(s.center.x) << '\t'
          << format_value(s.center.y) << '\t' << format_value(s.radius) << '\t' << (s.known ? 1 : 0) << '\n';
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

SpotsTable read_spots_tsv(const fs::path& path) {
  auto in = open_in(path, "spots table");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty spots table");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSpotsHeader) throw FormatError(path.string() + ": unexpected spots header");
  SpotsTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) throw FormatError(where(path, line_no) + ": expected 7 columns, found " + std::to_string(f.size()));
    if (table.spots.empty()) {
      table.sample_id = f[0];
    } else if (f[0] != table.sample_id) {
      throw DataError(where(path, line_no) + ": sample id " + f[0] + " differs from " + table.sample_id);
    }
    Spot s;
    s.layer_index = parse_int(f[1], path, line_no, "layer_index");
    s.spot_id = f[2];
    if (s.spot_id.empty()) throw DataError(where(path, line_no) + ": empty spot id");
    s.center = {parse_double(f[3], path, line_no, "x"), parse_double(f[4], path, line_no, "y")};
    s.radius = f[5].empty() ? kDefaultSpotRadius : parse_double(f[5], path, line_no, "radius");
    if (f[6] == "1" || f[6] == "true") {
      s.known = true;
    } else if (f[6] == "0" || f[6] == "false" || f[6].empty()) {
      s.known = false;
    } else {
      throw FormatError(where(path, line_no) + ": bad known flag '" + f[6] + "'");
    }
    table.spots.push_back(std::move(s));
  }
  return table;
}

void write_expression_tsv(const ExpressionMatrix& expr, std::span<const std::string> spot_ids, const fs::path& path) {
  if (static_cast<Eigen::Index>(spot_ids.size()) != expr.rows()) {
    throw UsageError("write_expression_tsv: " + std::to_string(spot_ids.size()) + " spot ids for " +
                     std::to_string(expr.rows()) + " rows");
  }
  if (static_cast<Eigen::Index>(expr.gene_names.size()) != expr.cols()) {
    throw UsageError("write_expression_tsv: gene name count does not match columns");
  }
  auto out = open_out(path);
  out << "spot_id";
  for (const auto& g : expr.gene_names) out << '\t' << g;
  out << '\n';
  for (Eigen::Index i = 0; i < expr.rows(); ++i) {
    out << spot_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < expr.cols(); ++j) out << '\t' << format_value(expr.values(i, j));
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

ExpressionTable read_expression_tsv(const fs::path& path) {
  auto in = open_in(path, "expression matrix");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty expression file");
  auto header = split_tabs(line);
  if (header.empty() || header[0] != "spot_id") throw FormatError(path.string() + ": header must start with spot_id");
  ExpressionTable table;
  table.expression.gene_names.assign(header.begin() + 1, header.end());
  std::unordered_set<std::string> seen;
  for (const auto& g : table.expression.gene_names) {
    if (g.empty()) throw DataError(path.string() + ": empty gene name in header");
    if (!seen.insert(g).second) throw DataError(path.string() + ": duplicate gene name " + g);
  }
  const std::size_t genes = table.expression.gene_names.size();
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_tabs(line);
    if (f.size() != genes + 1) {
      throw FormatError(where(path, line_no) + ": expected " + std::to_string(genes + 1) + " columns, found " +
                        std::to_string(f.size()));
    }
    table.spot_ids.push_back(f[0]);
    for (std::size_t j = 0; j < genes; ++j) {
      values.push_back(parse_double(f[j + 1], path, line_no, table.expression.gene_names[j]));
    }
  }
  const auto rows = static_cast<Eigen::Index>(table.spot_ids.size());
  table.expression.values = Eigen::Map<const Matrix>(values.data(), rows, static_cast<Eigen::Index>(genes));
  return table;
}

void write_feature_matrix(const FeatureMatrix& features, const fs::path& path) {
  auto out = open_out(path);
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  detail::write_le<std::uint16_t>(out, kFeatureFormatVersion);
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(features.level));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.values.size(); ++i) {
    detail::write_f32(out, static_cast<float>(features.values.data()[i]));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

FeatureMatrix read_feature_matrix(const fs::path& path) {
  auto in = open_in(path, "feature matrix");
  detail::LeReader r(in, path.string());
  char magic[sizeof(kFeatureMagic)];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kFeatureMagic))) {
    throw FormatError(path.string() + ": not a feature matrix (bad magic)");
  }
  const auto version = r.read<std::uint16_t>();
  if (version != kFeatureFormatVersion) {
    throw FormatError(path.string() + ": unsupported feature format version " + std::to_string(version));
  }
  const auto level = r.read<std::uint8_t>();
  if (level > 2) throw FormatError(path.string() + ": unknown feature level code " + std::to_string(level));
  const auto rows = r.read<std::uint32_t>();
  const auto cols = r.read<std::uint32_t>();
  if (static_cast<std::uint64_t>(rows) * cols * 4 != r.remaining()) {
    throw FormatError(path.string() + ": payload size does not match " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  FeatureMatrix out;
  out.level = static_cast<FeatureLevel>(level);
  out.values.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw DataError(path.string() + ": non-finite feature at row " + std::to_string(i) + ", column " +
                        std::to_string(j));
      }
      out.values(i, j) = static_cast<double>(v);
    }
  }
  return out;
}

void write_transforms_json(const SampleStack& stack, const fs::path& path) {
  json layers = json::array();
  for (const auto& layer : stack.layers) {
    const auto& t = layer.transform;
    layers.push_back({{"layer_index", layer.layer_index},
                      {"a", t.a()},
                      {"b", t.b()},
                      {"c", t.c()},
                      {"d", t.d()},
                      {"tx", t.tx()},
                      {"ty", t.ty()},
                      {"is_reference", layer.is_reference}});
  }
  json doc = {{"format_version", 1}, {"sample_id", stack.sample_id}, {"layers", layers}};
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<LayerTransform> read_transforms_json(const fs::path& path) {
  const json doc = parse_json_file(path, "transforms file");
  if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
    throw FormatError(path.string() + ": expected an object with a 'layers' array");
  }
  std::vector<LayerTransform> out;
  for (const auto& j : doc["layers"]) {
    LayerTransform lt;
    lt.layer_index = json_field<int>(j, "layer_index", path);
    lt.transform = {json_field<double>(j, "a", path),  json_field<double>(j, "b", path),
                    json_field<double>(j, "c", path),  json_field<double>(j, "d", path),
                    json_field<double>(j, "tx", path), json_field<double>(j, "ty", path)};
    lt.is_reference = json_field<bool>(j, "is_reference", path);
    out.push_back(lt);
  }
  return out;
}

DatasetManifest read_manifest(const fs::path& path) {
  const json doc = parse_json_file(path, "manifest");
  DatasetManifest m;
  m.base_dir = path.parent_path();
  if (!doc.is_object()) throw FormatError(path.string() + ": manifest must be a JSON object");
  m.format_version = json_field<int>(doc, "format_version", path);
  if (m.format_version != kManifestFormatVersion) {
    throw FormatError(path.string() + ": unsupported manifest version " + std::to_string(m.format_version));
  }
  if (!doc.contains("samples") || !doc["samples"].is_array()) throw FormatError(path.string() + ": missing 'samples'");
  std::unordered_set<std::string> ids;
  for (const auto& s : doc["samples"]) {
    ManifestEntry e;
    e.sample_id = json_field<std::string>(s, "sample_id", path);
    if (!ids.insert(e.sample_id).second) throw DataError(path.string() + ": duplicate sample id " + e.sample_id);
    e.spots = json_field<std::string>(s, "spots", path);
    e.expression = json_field<std::string>(s, "expression", path);
    e.transforms = json_field<std::string>(s, "transforms", path);
    const json features = json_field<json>(s, "features", path);
    e.spot_features = json_field<std::string>(features, "spot", path);
    if (features.contains("region")) e.region_features = json_field<std::string>(features, "region", path);
    if (features.contains("global")) e.global_features = json_field<std::string>(features, "global", path);
    m.samples.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json samples = json::array();
  for (const auto& e : manifest.samples) {
    json features = {{"spot", e.spot_features}};
    if (!e.region_features.empty()) features["region"] = e.region_features;
    if (!e.global_features.empty()) features["global"] = e.global_features;
    samples.push_back({{"sample_id", e.sample_id},
                       {"spots", e.spots},
                       {"expression", e.expression},
                       {"features", features},
                       {"transforms", e.transforms}});
  }
  json doc = {{"format_version", manifest.format_version}, {"samples", samples}};
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

SampleStack load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  const auto resolve = [&manifest](const std::string& p) { return manifest.base_dir / p; };

  const SpotsTable spots = read_spots_tsv(resolve(entry.spots));
  const ExpressionTable expr = read_expression_tsv(resolve(entry.expression));
  const auto transforms = read_transforms_json(resolve(entry.transforms));

  SampleStack stack;
  stack.sample_id = entry.sample_id;
  if (!spots.spots.empty() && spots.sample_id != entry.sample_id) {
    throw DataError(resolve(entry.spots).string() + ": sample id " + spots.sample_id + " does not match manifest " +
                    entry.sample_id);
  }

  std::map<int, Layer> layers;
  for (const auto& t : transforms) {
    if (layers.count(t.layer_index) != 0) {
      throw DataError(resolve(entry.transforms).string() + ": duplicate layer " + std::to_string(t.layer_index));
    }
    Layer l;
    l.layer_index = t.layer_index;
    l.transform = t.transform;
    l.is_reference = t.is_reference;
    layers.emplace(t.layer_index, std::move(l));
  }
  for (const auto& s : spots.spots) {
    auto it = layers.find(s.layer_index);
    if (it == layers.end()) {
      throw DataError(resolve(entry.spots).string() + ": spot " + s.spot_id + " lies on layer " +
                      std::to_string(s.layer_index) + " which has no transform");
    }
    it->second.spots.push_back(s);
  }
  for (auto& [index, layer] : layers) stack.layers.push_back(std::move(layer));

  const auto ids = stack.spot_ids();
  if (expr.spot_ids.size() != ids.size()) {
    throw DataError(resolve(entry.expression).string() + ": " + std::to_string(expr.spot_ids.size()) +
                    " expression rows for " + std::to_string(ids.size()) + " spots");
  }
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < expr.spot_ids.size(); ++i) {
    if (!row_of.emplace(expr.spot_ids[i], static_cast<Eigen::Index>(i)).second) {
      throw DataError(resolve(entry.expression).string() + ": duplicate spot id " + expr.spot_ids[i]);
    }
  }
  stack.expression.gene_names = expr.expression.gene_names;
  stack.expression.values.resize(static_cast<Eigen::Index>(ids.size()), expr.expression.cols());
  // Feature rows follow the spots-table file order; remap them to enumeration order.
  std::unordered_map<std::string, Eigen::Index> file_row;
  for (std::size_t i = 0; i < spots.spots.size(); ++i) file_row.emplace(spots.spots[i].spot_id, static_cast<Eigen::Index>(i));
  std::vector<Eigen::Index> feature_rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = row_of.find(ids[i]);
    if (it == row_of.end()) {
      throw DataError(resolve(entry.expression).string() + ": no expression row for spot " + ids[i]);
    }
    stack.expression.values.row(static_cast<Eigen::Index>(i)) = expr.expression.values.row(it->second);
    feature_rows[i] = file_row.at(ids[i]);
  }

  const auto load_features = [&](const std::string& rel, FeatureLevel expected) {
    FeatureMatrix f = read_feature_matrix(resolve(rel));
    if (f.level != expected) {
      throw DataError(resolve(rel).string() + ": holds " + to_string(f.level) + " features, expected " +
                      to_string(expected));
    }
    if (f.rows() != static_cast<Eigen::Index>(ids.size())) {
      throw DataError(resolve(rel).string() + ": " + std::to_string(f.rows()) + " rows for " +
                      std::to_string(ids.size()) + " spots");
    }
    FeatureMatrix ordered{Matrix(f.rows(), f.cols()), f.level};
    for (std::size_t i = 0; i < ids.size(); ++i) ordered.values.row(static_cast<Eigen::Index>(i)) = f.values.row(feature_rows[i]);
    return ordered;
  };
  stack.features = load_features(entry.spot_features, FeatureLevel::spot);
  if (!entry.region_features.empty()) stack.region_features = load_features(entry.region_features, FeatureLevel::region);
  if (!entry.global_features.empty()) stack.global_features = load_features(entry.global_features, FeatureLevel::global);
  return stack;
}

std::vector<SampleStack> load_dataset(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw DataError("manifest not found: " + manifest_path.string());
  const DatasetManifest m = read_manifest(manifest_path);
  std::vector<SampleStack> out;
  out.reserve(m.samples.size());
  for (const auto& e : m.samples) out.push_back(load_sample(m, e));
  return out;
}

fs::path save_dataset(std::span<const SampleStack> stacks, const fs::path& dir) {
  fs::create_directories(dir);
  DatasetManifest m;
  for (const auto& s : stacks) {
    ManifestEntry e;
    e.sample_id = s.sample_id;
    e.spots = s.sample_id + ".spots.tsv";
    e.expression = s.sample_id + ".expression.tsv";
    e.spot_features = s.sample_id + ".spot.fmat";
    e.transforms = s.sample_id + ".transforms.json";
    write_spots_tsv(s, dir / e.spots);
    write_expression_tsv(s.expression, s.spot_ids(), dir / e.expression);
    write_feature_matrix(s.features, dir / e.spot_features);
    if (s.region_features.values.size() != 0) {
      e.region_features = s.sample_id + ".region.fmat";
      write_feature_matrix(s.region_features, dir / e.region_features);
    }
    if (s.global_features.values.size() != 0) {
      e.global_features = s.sample_id + ".global.fmat";
      write_feature_matrix(s.global_features, dir / e.global_features);
    }
    write_transforms_json(s, dir / e.transforms);
    m.samples.push_back(std::move(e));
  }
  const fs::path manifest = dir / "manifest.json";
  write_manifest(m, manifest);
  return manifest;
}

}  // namespace st3d::io
