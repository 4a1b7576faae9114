#include "dermapipe/dataset.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dermapipe/error.hpp"
#include "dermapipe/rng.hpp"

namespace dermapipe {

SeverityLabel::SeverityLabel(int value) : value_(value) {
  if (value < 0 || value >= kNumClasses) {
    fail(Errc::InvalidLabel, "label " + std::to_string(value) + " outside [0,3]");
  }
}

Manifest::Manifest(std::vector<ImageRecord> records) : records_(std::move(records)) {
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.image_path.empty()) fail(Errc::InvalidArgument, "record '" + r.id + "' has empty image_path");
    if (!index_.emplace(r.id, i).second) fail(Errc::DuplicateId, r.id);
  }
}

const ImageRecord* Manifest::find(const std::string& id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const ImageRecord& Manifest::at(const std::string& id) const {
  const auto* r = find(id);
  if (r == nullptr) fail(Errc::UnknownId, id);
  return *r;
}

std::vector<std::string> Manifest::ids() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.id);
  return out;
}

std::unordered_map<std::string, SeverityLabel> Manifest::labels() const {
  std::unordered_map<std::string, SeverityLabel> out;
  for (const auto& r : records_) out.emplace(r.id, r.label);
  return out;
}

std::size_t round_count(double scaled) {
  // The epsilon absorbs representation error in products like 0.8 * 10.
  return static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9));
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<ImageRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(Errc::ParseError, where + ": " + e.what());
    }
    if (!row.is_object()) fail(Errc::ParseError, where + ": expected a JSON object");
    ImageRecord rec;
    try {
      rec.id = row.at("id").get<std::string>();
      rec.image_path = resolve(base_dir, row.at("image_path").get<std::string>());
      if (auto it = row.find("mask_path"); it != row.end() && !it->is_null()) {
        rec.mask_path = resolve(base_dir, it->get<std::string>());
      }
      if (auto it = row.find("source"); it != row.end() && !it->is_null()) {
        rec.source = it->get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::ParseError, where + ": " + e.what());
    }
    const auto& label = row.find("label");
    if (label == row.end() || !label->is_number_integer()) {
      fail(Errc::ParseError, where + ": 'label' must be an integer");
    }
    const auto value = label->get<long long>();
    if (value < 0 || value >= kNumClasses) {
      fail(Errc::InvalidLabel, rec.id + " has label " + std::to_string(value));
    }
    rec.label = SeverityLabel(static_cast<int>(value));
    if (rec.id.empty()) fail(Errc::ParseError, where + ": empty id");
    if (rec.image_path.empty()) fail(Errc::ParseError, where + ": empty image_path");
    if (!seen.insert(rec.id).second) fail(Errc::DuplicateId, rec.id);
    records.push_back(std::move(rec));
  }
  return Manifest(std::move(records));
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (const auto& r : manifest.records()) {
    nlohmann::json row = {{"id", r.id},
                          {"image_path", r.image_path.string()},
                          {"mask_path", r.mask_path ? nlohmann::json(r.mask_path->string()) : nlohmann::json()},
                          {"label", r.label.value()},
                          {"source", r.source}};
    out << row.dump() << '\n';
  }
}

std::vector<SplitSpec> make_splits(const Manifest& manifest, const SplitOptions& options) {
  if (manifest.empty()) fail(Errc::EmptyManifest, "cannot split an empty manifest");
  if (options.n_splits < 1) fail(Errc::InvalidArgument, "n_splits must be >= 1");
  if (!(options.train_ratio > 0.0 && options.train_ratio < 1.0)) {
    fail(Errc::InvalidArgument, "train_ratio must lie in (0,1)");
  }

  std::vector<SplitSpec> splits;
  splits.reserve(static_cast<std::size_t>(options.n_splits));
  for (int s = 0; s < options.n_splits; ++s) {
    SplitSpec split;
    split.seed = options.seed;
    split.split_index = s;
    split.fraction = 1.0;
    Rng rng(options.seed + static_cast<std::uint64_t>(s));

    auto cut = [&](std::vector<std::string> ids) {
      rng.shuffle(std::span(ids));
      const auto n_train = std::min(ids.size(), round_count(options.train_ratio * static_cast<double>(ids.size())));
      split.train_ids.insert(split.train_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
      split.val_ids.insert(split.val_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    };

    if (options.stratified) {
      std::array<std::vector<std::string>, kNumClasses> by_class;
      for (const auto& r : manifest.records()) by_class[static_cast<std::size_t>(r.label.value())].push_back(r.id);
      for (auto& ids : by_class) cut(std::move(ids));
    } else {
      cut(manifest.ids());
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

SplitSpec subsample_train(const SplitSpec& split, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    fail(Errc::FractionOutOfRange, "fraction " + std::to_string(fraction) + " not in (0,1]");
  }
  const std::size_t n = split.train_ids.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(split.split_index)));
  rng.shuffle(std::span(order));

  const std::size_t keep = std::min(n, round_count(fraction * static_cast<double>(n)));
  std::vector<bool> selected(n, false);
  for (std::size_t i = 0; i < keep; ++i) selected[order[i]] = true;

  SplitSpec out = split;
  out.fraction = fraction;
  out.train_ids.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (selected[i]) out.train_ids.push_back(split.train_ids[i]);
  }
  return out;
}

std::uint64_t split_hash(const SplitSpec& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& id : split.train_ids) feed(id);
  feed("|");
  for (const auto& id : split.val_ids) feed(id);
  return h;
}

nlohmann::json to_json(const SplitSpec& split) {
  return {{"seed", split.seed},
          {"split_index", split.split_index},
          {"fraction", split.fraction},
          {"train_ids", split.train_ids},
          {"val_ids", split.val_ids}};
}

SplitSpec split_from_json(const nlohmann::json& j) {
  try {
    SplitSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.split_index = j.at("split_index").get<int>();
    s.fraction = j.at("fraction").get<double>();
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ParseError, std::string("split document: ") + e.what());
  }
}

void write_split(const SplitSpec& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << to_json(split).dump(2) << '\n';
}

SplitSpec read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, path.string());
  try {
    return split_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace dermapipe
