#include "dermapipe/segmentation.hpp"

#include <atomic>
#include <fcntl.h>
#include <fstream>
#include <mutex>
#include <optional>
#include <signal.h>
#include <sstream>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "dermapipe/error.hpp"
#include "dermapipe/log.hpp"

namespace dermapipe {
namespace fs = std::filesystem;

nlohmann::json to_json(const SegmentationJob& job) {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& p : job.prompts.pairs) {
    prompts.push_back({{"image", p.image_path.string()}, {"mask", p.mask_path.string()}});
  }
  return {{"image", job.image.string()},
          {"size", {job.size, job.size}},
          {"prompts", std::move(prompts)},
          {"out_mask", job.out_mask.string()}};
}

BinaryMask OracleBackend::run(const SegmentationJob& job) const {
  const auto* rec = manifest_.find(job.record_id);
  if (rec == nullptr || !rec->mask_path) {
    fail(Errc::BackendFailure, "oracle backend has no annotated mask for '" + job.record_id + "'");
  }
  return load_mask(*rec->mask_path);
}

BinaryMask TrivialBackend::run(const SegmentationJob& job) const { return full_mask(job.size, job.size); }

ProcessBackend::ProcessBackend(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) fail(Errc::InvalidArgument, "empty backend command");
}

std::string ProcessBackend::id() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : command_) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << "cmd-" << std::hex << (h & 0xffffffffULL);
  return os.str();
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct ExitStatus {
  bool timed_out = false;
  int code = 0;
};

ExitStatus run_with_timeout(const std::string& command, const fs::path& job_file, const fs::path& stderr_file,
                            std::chrono::milliseconds timeout) {
  // Everything the child needs is prepared before fork.
  const std::string script = command + " \"$1\"";
  const std::string job = job_file.string();
  const std::string err = stderr_file.string();

  const pid_t pid = fork();
  if (pid < 0) fail(Errc::BackendFailure, "fork failed");
  if (pid == 0) {
    setpgid(0, 0);
    const int fd = open(err.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      dup2(fd, STDERR_FILENO);
      dup2(fd, STDOUT_FILENO);
      close(fd);
    }
    execl("/bin/sh", "sh", "-c", script.c_str(), "sh", job.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) fail(Errc::BackendFailure, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      return {true, -1};
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (WIFEXITED(status)) return {false, WEXITSTATUS(status)};
  return {false, 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0)};
}

}  // namespace

BinaryMask ProcessBackend::run(const SegmentationJob& job) const {
  const fs::path job_file = fs::path(job.out_mask.string() + ".job.json");
  const fs::path err_file = fs::path(job.out_mask.string() + ".stderr");
  {
    std::ofstream out(job_file, std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + job_file.string());
    out << to_json(job).dump(2) << '\n';
  }
  std::error_code ec;
  fs::remove(job.out_mask, ec);

  const auto status = run_with_timeout(command_, job_file, err_file, timeout_);
  std::string stderr_text = read_file(err_file);
  fs::remove(err_file, ec);
  fs::remove(job_file, ec);
  while (!stderr_text.empty() && (stderr_text.back() == '\n' || stderr_text.back() == '\r')) stderr_text.pop_back();

  if (status.timed_out) {
    fail(Errc::Timeout, "backend exceeded " + std::to_string(timeout_.count()) + " ms on '" + job.record_id + "'");
  }
  if (status.code != 0) {
    fail(Errc::BackendFailure, "exit status " + std::to_string(status.code) + ": " + stderr_text);
  }
  if (!fs::exists(job.out_mask)) fail(Errc::BackendFailure, "backend wrote no mask to " + job.out_mask.string());
  try {
    return load_mask(job.out_mask);
  } catch (const Error& e) {
    fail(Errc::MalformedBackendOutput, e.what());
  }
}

BinaryMask segment(const SegmentationJob& job, const SegmenterBackend& backend) {
  for (const auto& p : job.prompts.pairs) {
    if (!fs::exists(p.mask_path)) fail(Errc::InvalidArgument, "prompt mask missing: " + p.mask_path.string());
  }
  const ImageSize size = probe_image_size(job.image);
  const BinaryMask raw = backend.run(job);
  if (raw.size() == 0) fail(Errc::MalformedBackendOutput, "backend returned an empty mask");
  // Backends built in-process may hand back 0/255 data; normalize to {0,1}.
  const BinaryMask binary = (raw.array() >= 1).cast<std::uint8_t>().matrix();
  return resize_nearest(binary, size.height, size.width);
}

nlohmann::json to_json(const SegmentationIndex& index) {
  nlohmann::json masks = nlohmann::json::object();
  for (const auto& [id, path] : index.masks) masks[id] = path.string();
  nlohmann::json failures = nlohmann::json::object();
  for (const auto& [id, reason] : index.failures) failures[id] = reason;
  return {{"backend", index.backend}, {"k", index.k}, {"masks", masks}, {"failures", failures}};
}

namespace {

std::string file_stem_for(const std::string& id) {
  std::string out;
  bool changed = false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    out.push_back(ok ? c : '_');
    changed |= !ok;
  }
  if (changed || out.empty() || out == "." || out == "..") {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : id) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << out << '-' << std::hex << h;
    out = os.str();
  }
  return out;
}

}  // namespace

SegmentationIndex run_segmentation_batch(const Manifest& manifest, const FeatureStore& whole_image_features,
                                         const SegmenterBackend& backend, const SegmentationBatchOptions& options) {
  if (options.k < 1) fail(Errc::InvalidArgument, "K must be >= 1");
  std::vector<std::string> pool = options.pool;
  if (pool.empty()) {
    for (const auto& r : manifest.records()) {
      if (r.mask_path) pool.push_back(r.id);
    }
  }
  for (const auto& r : manifest.records()) {
    if (!whole_image_features.contains(r.id)) fail(Errc::MissingFeature, r.id);
  }

  const fs::path cache_dir = options.out_dir / (backend.id() + "_k" + std::to_string(options.k));
  fs::create_directories(cache_dir);

  const auto& records = manifest.records();
  struct Outcome {
    std::optional<fs::path> mask;
    std::string failure;
    bool called = false;
  };
  std::vector<Outcome> outcomes(records.size());

  auto process = [&](std::size_t i) {
    const auto& rec = records[i];
    Outcome& out = outcomes[i];
    const fs::path mask_path = cache_dir / (file_stem_for(rec.id) + ".png");
    if (!options.force && fs::exists(mask_path)) {
      out.mask = mask_path;
      return;
    }
    try {
      SegmentationJob job;
      job.record_id = rec.id;
      job.image = rec.image_path;
      job.prompts = retrieve_prompts(rec.id, whole_image_features, manifest, pool, options.k);
      job.out_mask = mask_path;
      out.called = true;
      const BinaryMask mask = segment(job, backend);
      write_mask(mask, mask_path);
      out.mask = mask_path;
    } catch (const Error& e) {
      out.failure = e.what();
      logger().warn("segmentation failed for '{}', falling back to the whole image: {}", rec.id, e.what());
    }
  };

  const int workers = std::max(1, std::min<int>(options.jobs, static_cast<int>(records.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> threads;
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (std::size_t i = next++; i < records.size(); i = next++) process(i);
      });
    }
  }

  SegmentationIndex index;
  index.backend = backend.id();
  index.k = options.k;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.called) ++index.backend_calls;
    if (o.mask) {
      index.masks[records[i].id] = *o.mask;
    } else {
      index.failures[records[i].id] = o.failure;
    }
  }
  std::ofstream out(options.out_dir / "index.json", std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + (options.out_dir / "index.json").string());
  out << to_json(index).dump(2) << '\n';
  return index;
}

}  // namespace dermapipe
