#include "dermapipe/featurestore.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "dermapipe/error.hpp"

namespace dermapipe {

std::string_view masking_name(Masking m) noexcept {
  switch (m) {
    case Masking::Masked: return "masked";
    case Masking::WholeImage: return "whole_image";
    case Masking::Unknown: break;
  }
  return "unknown";
}

Masking parse_masking(std::string_view s) {
  if (s == "masked") return Masking::Masked;
  if (s == "whole_image") return Masking::WholeImage;
  fail(Errc::ParseError, "masking must be 'masked' or 'whole_image', got '" + std::string(s) + "'");
}

FeatureStore::FeatureStore(int dim, Provenance provenance) : dim_(dim), provenance_(std::move(provenance)) {
  if (dim < 0) fail(Errc::InvalidArgument, "negative feature dimension");
}

void FeatureStore::add(const std::string& id, EmbeddingVector v) {
  if (v.size() != dim_) {
    fail(Errc::DimMismatch, id + " has " + std::to_string(v.size()) + " values, store dim is " + std::to_string(dim_));
  }
  if (!v.allFinite()) fail(Errc::NonFinite, id);
  if (id.size() > 0xffff) fail(Errc::InvalidArgument, "id longer than 65535 bytes");
  if (!index_.emplace(id, ids_.size()).second) fail(Errc::DuplicateId, id);
  ids_.push_back(id);
  vectors_.push_back(std::move(v));
}

const EmbeddingVector* FeatureStore::find(const std::string& id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &vectors_[it->second];
}

const EmbeddingVector& FeatureStore::get_embedding(const std::string& id) const {
  const auto* v = find(id);
  if (v == nullptr) fail(Errc::UnknownId, id);
  return *v;
}

void FeatureStore::merge(const FeatureStore& other) {
  const Masking a = provenance_.masking;
  const Masking b = other.provenance_.masking;
  if (a != Masking::Unknown && b != Masking::Unknown && a != b) {
    fail(Errc::ProvenanceMismatch, "cannot merge " + std::string(masking_name(b)) + " features into a " +
                                       std::string(masking_name(a)) + " store");
  }
  if (other.dim_ != dim_) fail(Errc::DimMismatch, "merging stores of dim " + std::to_string(other.dim_) +
                                                      " and " + std::to_string(dim_));
  for (std::size_t i = 0; i < other.ids_.size(); ++i) add(other.ids_[i], other.vectors_[i]);
  if (a == Masking::Unknown) provenance_.masking = b;
}

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::string where) : buf_(buf), where_(std::move(where)) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail(Errc::TruncatedFile, where_ + ": unexpected end of file at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::vector<char>& buf_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

std::filesystem::path meta_path_for(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

std::optional<Provenance> read_feature_meta(const std::filesystem::path& path) {
  const auto meta = meta_path_for(path);
  std::ifstream in(meta);
  if (!in) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(in);
    Provenance p;
    p.provider = j.value("provider", "");
    if (j.contains("masking")) p.masking = parse_masking(j.at("masking").get<std::string>());
    p.created_unix = j.value("created_unix", std::int64_t{0});
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ParseError, meta.string() + ": " + e.what());
  }
}

FeatureStore read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::string where = path.string();
  if (buf.size() < 4 || std::memcmp(buf.data(), kFeatureMagic, 4) != 0) fail(Errc::BadMagic, where);
  Reader r(buf, where);
  r.str(4);
  const auto version = r.u32();
  if (version != kFeatureVersion) fail(Errc::UnsupportedVersion, where + ": version " + std::to_string(version));
  const auto dim = r.u32();
  const auto count = r.u64();
  if (dim > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) fail(Errc::DimMismatch, where);

  FeatureStore store(static_cast<int>(dim), read_feature_meta(path).value_or(Provenance{}));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id_len = r.u16();
    std::string id = r.str(id_len);
    if (r.remaining() < std::size_t{dim} * 4) {
      fail(Errc::TruncatedFile, where + ": header declares " + std::to_string(count) + " records, found " +
                                    std::to_string(i));
    }
    EmbeddingVector v(static_cast<Eigen::Index>(dim));
    for (std::uint32_t k = 0; k < dim; ++k) v(k) = r.f32();
    store.add(id, std::move(v));
  }
  if (r.remaining() != 0) fail(Errc::DimMismatch, where + ": trailing bytes after the last record");
  return store;
}

void write_feature_file(const FeatureStore& store, const std::filesystem::path& path, bool write_meta) {
  Writer w;
  w.bytes(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.u64(store.size());
  for (const auto& id : store.ids()) {
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id.data(), id.size());
    const auto& v = store.get_embedding(id);
    for (Eigen::Index k = 0; k < v.size(); ++k) w.f32(v(k));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) fail(Errc::IoError, "short write to " + path.string());

  if (write_meta) {
    const auto& p = store.provenance();
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    nlohmann::json meta = {{"provider", p.provider}, {"created_unix", p.created_unix != 0 ? p.created_unix : now}};
    if (p.masking != Masking::Unknown) meta["masking"] = std::string(masking_name(p.masking));
    std::ofstream m(meta_path_for(path), std::ios::trunc);
    if (!m) fail(Errc::IoError, "cannot write " + meta_path_for(path).string());
    m << meta.dump(2) << '\n';
  }
}

}  // namespace dermapipe
