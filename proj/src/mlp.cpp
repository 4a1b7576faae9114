#include "dermapipe/mlp.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include "dermapipe/metrics.hpp"
#include "format.hpp"

namespace dermapipe {

void TrainConfig::validate() const {
  if (!(adam.learning_rate > 0.0)) fail(Errc::ConfigError, "learning_rate must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(Errc::ConfigError, "dropout must lie in [0,1)");
  if (epochs < 0) fail(Errc::ConfigError, "epochs must be >= 0");
  if (batch_size < 1) fail(Errc::ConfigError, "batch_size must be >= 1");
  if (hidden < 1) fail(Errc::ConfigError, "hidden must be >= 1");
  if (!(adam.weight_decay >= 0.0)) fail(Errc::ConfigError, "weight_decay must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    fail(Errc::ConfigError, "Adam betas must lie in [0,1)");
  }
}

Matrix<double> gather_features(const EmbeddingProvider& features, std::span<const std::string> ids) {
  Matrix<double> x(features.dim(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    try {
      x.col(static_cast<Eigen::Index>(j)) = features.get_embedding(ids[j]).cast<double>();
    } catch (const Error& e) {
      if (e.code() != Errc::UnknownId) throw;
      fail(Errc::MissingFeature, ids[j]);
    }
  }
  return x;
}

std::vector<int> gather_labels(const std::unordered_map<std::string, SeverityLabel>& labels,
                               std::span<const std::string> ids) {
  std::vector<int> y;
  y.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = labels.find(id);
    if (it == labels.end()) fail(Errc::MissingLabel, id);
    y.push_back(it->second.value());
  }
  return y;
}

TrainResult train(const EmbeddingProvider& features, const SplitSpec& split,
                  const std::unordered_map<std::string, SeverityLabel>& labels, const TrainConfig& config) {
  config.validate();
  const Matrix<double> x_train = gather_features(features, split.train_ids);
  const std::vector<int> y_train = gather_labels(labels, split.train_ids);
  const Matrix<double> x_val = gather_features(features, split.val_ids);
  const std::vector<int> y_val = gather_labels(labels, split.val_ids);

  Rng init_rng(derive_seed(config.seed, 1));
  Rng shuffle_rng(derive_seed(config.seed, 2));
  Rng dropout_rng(derive_seed(config.seed, 3));

  auto params = glorot_init<double>(features.dim(), config.hidden, kNumClasses, init_rng);
  auto state = AdamState<double>::for_params(params);

  TrainResult result;
  const auto n = static_cast<std::size_t>(x_train.cols());
  std::vector<std::size_t> order(n);
  Matrix<double> batch_x;
  std::vector<int> batch_y;

  for (int epoch = 0; epoch < config.epochs && n > 0; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span(order));

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const auto b = static_cast<Eigen::Index>(stop - start);
      batch_x.resize(x_train.rows(), b);
      batch_y.resize(static_cast<std::size_t>(b));
      for (Eigen::Index j = 0; j < b; ++j) {
        const std::size_t src = order[start + static_cast<std::size_t>(j)];
        batch_x.col(j) = x_train.col(static_cast<Eigen::Index>(src));
        batch_y[static_cast<std::size_t>(j)] = y_train[src];
      }
      auto fwd = forward(params, batch_x, Mode::Train, config.dropout, &dropout_rng);
      const auto loss = softmax_cross_entropy(fwd.logits, batch_y);
      const auto grads = backward(params, fwd.cache, loss.dlogits);
      adam_step(params, grads, state, config.adam);
    }

    EpochLog entry;
    entry.epoch = epoch + 1;
    // Eval-mode loss over the whole training set; the minibatch average is
    // too noisy under dropout to track progress.
    entry.train_loss = softmax_cross_entropy(forward(params, x_train, Mode::Eval).logits, y_train).loss;
    entry.val_weighted_f1 =
        y_val.empty() ? std::numeric_limits<double>::quiet_NaN() : weighted_f1(y_val, predict(params, x_val));
    result.log.push_back(entry);
  }
  result.params = params.cast<float>();
  return result;
}

std::string training_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_weighted_f1\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << detail::shortest(e.train_loss) << ',' << detail::shortest(e.val_weighted_f1) << '\n';
  }
  return os.str();
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename Derived>
void put_row_major(std::string& out, const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
}

}  // namespace

void write_model(const MlpParams<float>& params, const std::filesystem::path& path) {
  std::string out(kModelMagic, 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(params.input_dim()));
  put_u32(out, static_cast<std::uint32_t>(params.hidden_dim()));
  put_u32(out, static_cast<std::uint32_t>(params.num_classes()));
  put_row_major(out, params.w1);
  put_row_major(out, params.b1);
  put_row_major(out, params.w2);
  put_row_major(out, params.b2);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::IoError, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(Errc::IoError, "short write to " + path.string());
}

MlpParams<float> read_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::MissingFile, path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (buf.size() < 4 || std::memcmp(buf.data(), kModelMagic, 4) != 0) fail(Errc::BadMagic, where);

  std::size_t pos = 4;
  auto u32 = [&]() {
    if (buf.size() - pos < 4) fail(Errc::TruncatedFile, where);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  const auto version = u32();
  if (version != kModelVersion) fail(Errc::UnsupportedVersion, where + ": version " + std::to_string(version));
  const auto d = u32(), h = u32(), c = u32();
  const std::uint64_t expected = 20 + 4ULL * (std::uint64_t{d} * h + h + std::uint64_t{h} * c + c);
  if (buf.size() < expected) fail(Errc::TruncatedFile, where);
  if (buf.size() > expected) fail(Errc::ShapeMismatch, where + ": trailing bytes");

  auto params = MlpParams<float>::zeros(static_cast<int>(d), static_cast<int>(h), static_cast<int>(c));
  auto get_row_major = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = std::bit_cast<float>(u32());
  };
  get_row_major(params.w1);
  get_row_major(params.b1);
  get_row_major(params.w2);
  get_row_major(params.b2);
  if (!params.all_finite()) fail(Errc::NonFinite, where);
  return params;
}

}  // namespace dermapipe
