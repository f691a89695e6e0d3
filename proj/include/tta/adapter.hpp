#pragma once

#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "imageops.hpp"
#include "prediction.hpp"
#include "rng.hpp"
#include "transform.hpp"

namespace tta {

/// A frozen model: the same images always give the same probabilities.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;
  virtual PredictionMatrix predict(std::span<const ImageBuffer> images) = 0;
};

struct ToyTrainConfig {
  std::size_t iterations = 150;
  double learning_rate = 0.02;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression on per-feature standardized pixels, trained
/// by full-batch gradient descent from zero weights.
class ToyClassifier : public ModelAdapter {
 public:
  ToyClassifier() = default;

  std::size_t n_classes() const noexcept { return n_classes_; }
  std::size_t n_features() const noexcept { return mean_.size(); }

  static ToyClassifier train(std::span<const ImageBuffer> images, const LabelVector& labels,
                             const ToyTrainConfig& cfg = {}) {
    if (images.size() != labels.size()) throw DataError("image/label count mismatch");
    if (images.empty()) throw DataError("no training data");
    const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
    {
      std::vector<bool> seen(k, false);
      std::size_t distinct = 0;
      for (auto l : labels) distinct += seen[l] ? 0 : (seen[l] = true, 1);
      if (distinct < 2) throw DataError("training data must contain at least two classes");
    }
    ToyClassifier model;
    model.shape_ = images[0];
    const std::size_t d = images[0].size();
    for (const auto& img : images)
      if (!img.same_shape(images[0])) throw DataError("training images differ in shape");

    // Canonical sample order (label, then pixels) so the result does not depend
    // on how the caller ordered the data.
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (labels[a] != labels[b]) return labels[a] < labels[b];
      const auto da = images[a].data();
      const auto db = images[b].data();
      return std::lexicographical_compare(da.begin(), da.end(), db.begin(), db.end());
    });

    const std::size_t n = images.size();
    model.mean_.assign(d, 0.0);
    model.inv_std_.assign(d, 0.0);
    for (std::size_t i : order)
      for (std::size_t j = 0; j < d; ++j) model.mean_[j] += images[i].data()[j];
    for (double& v : model.mean_) v /= static_cast<double>(n);
    for (std::size_t i : order)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = images[i].data()[j] - model.mean_[j];
        model.inv_std_[j] += c * c;
      }
    for (double& v : model.inv_std_) {
      const double sd = std::sqrt(v / static_cast<double>(n));
      v = sd > 1e-8 ? 1.0 / sd : 0.0;
    }

    std::vector<double> x(n * d);
    std::vector<std::uint32_t> y(n);
    for (std::size_t r = 0; r < n; ++r) {
      model.features(images[order[r]], {x.data() + r * d, d});
      y[r] = labels[order[r]];
    }

    model.n_classes_ = k;
    model.weights_.assign(k * d, 0.0);
    model.bias_.assign(k, 0.0);
    std::vector<double> grad_w(k * d);
    std::vector<double> grad_b(k);
    std::vector<double> probs(k);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.data() + r * d;
        model.scores(xr, probs);
        for (std::size_t c = 0; c < k; ++c) {
          const double g = probs[c] - (y[r] == c ? 1.0 : 0.0);
          grad_b[c] += g;
          double* gw = grad_w.data() + c * d;
          for (std::size_t j = 0; j < d; ++j) gw[j] += g * xr[j];
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(n);
      for (std::size_t j = 0; j < model.weights_.size(); ++j)
        model.weights_[j] -= step * grad_w[j] + cfg.learning_rate * cfg.l2 * model.weights_[j];
      for (std::size_t c = 0; c < k; ++c) model.bias_[c] -= step * grad_b[c];
    }
    return model;
  }

  PredictionMatrix predict(std::span<const ImageBuffer> images) override {
    return predict_const(images);
  }

  PredictionMatrix predict_const(std::span<const ImageBuffer> images) const {
    PredictionMatrix out(images.size(), n_classes_);
    std::vector<double> x(n_features());
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!images[i].same_shape(shape_))
        throw AdapterError("image " + std::to_string(i) + " is " + std::to_string(images[i].height()) +
                           "x" + std::to_string(images[i].width()) + "x" +
                           std::to_string(images[i].channels()) + ", model expects " +
                           std::to_string(shape_.height()) + "x" + std::to_string(shape_.width()) +
                           "x" + std::to_string(shape_.channels()));
      features(images[i], x);
      scores(x.data(), out.row(i));
    }
    return out;
  }

  std::span<const double> weights() const noexcept { return weights_; }

  // Model file: "TTAMDL01", u32 h, w, c, k, then mean, inv_std, weights, bias as f64.
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write("TTAMDL01", 8);
    detail::put_u32(os, static_cast<std::uint32_t>(shape_.height()));
    detail::put_u32(os, static_cast<std::uint32_t>(shape_.width()));
    detail::put_u32(os, static_cast<std::uint32_t>(shape_.channels()));
    detail::put_u32(os, static_cast<std::uint32_t>(n_classes_));
    auto put = [&](const std::vector<double>& v) {
      os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    };
    put(mean_);
    put(inv_std_);
    put(weights_);
    put(bias_);
    if (!os) throw DataError("failed writing " + path.string());
  }

  static ToyClassifier load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open model " + path.string());
    unsigned char header[24];
    is.read(reinterpret_cast<char*>(header), 24);
    if (is.gcount() != 24 || std::memcmp(header, "TTAMDL01", 8) != 0)
      throw DataError(path.string() + " is not a toy classifier model");
    ToyClassifier m;
    const auto h = detail::get_u32(header + 8);
    const auto w = detail::get_u32(header + 12);
    const auto c = detail::get_u32(header + 16);
    m.n_classes_ = detail::get_u32(header + 20);
    m.shape_ = ImageBuffer(h, w, c);
    const std::size_t d = m.shape_.size();
    auto get = [&](std::vector<double>& v, std::size_t count) {
      v.resize(count);
      is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 8));
      if (is.gcount() != static_cast<std::streamsize>(count * 8))
        throw DataError(path.string() + ": truncated model file");
    };
    get(m.mean_, d);
    get(m.inv_std_, d);
    get(m.weights_, d * m.n_classes_);
    get(m.bias_, m.n_classes_);
    return m;
  }

 private:
  // Four independent accumulators; fixed summation order, so still deterministic.
  static double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      s0 += a[j] * b[j];
      s1 += a[j + 1] * b[j + 1];
      s2 += a[j + 2] * b[j + 2];
      s3 += a[j + 3] * b[j + 3];
    }
    for (; j < n; ++j) s0 += a[j] * b[j];
    return (s0 + s1) + (s2 + s3);
  }

  void features(const ImageBuffer& img, std::span<double> out) const {
    const auto px = img.data();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (px[j] - mean_[j]) * inv_std_[j];
  }

  void scores(const double* x, std::span<double> probs) const {
    const std::size_t d = mean_.size();
    double mx = -1e300;
    for (std::size_t c = 0; c < n_classes_; ++c) {
      const double* w = weights_.data() + c * d;
      probs[c] = bias_[c] + dot(w, x, d);
      mx = std::max(mx, probs[c]);
    }
    double sum = 0.0;
    for (auto& p : probs) sum += (p = std::exp(p - mx));
    for (auto& p : probs) p /= sum;
  }

  ImageBuffer shape_;  // pixels unused, dimensions only
  std::size_t n_classes_ = 0;
  std::vector<double> mean_;
  std::vector<double> inv_std_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Serves a matrix computed elsewhere. The request must have exactly as many
/// images as the stored matrix has rows.
class MatrixFileAdapter : public ModelAdapter {
 public:
  explicit MatrixFileAdapter(PredictionMatrix m) : m_(std::move(m)) {}
  explicit MatrixFileAdapter(const std::filesystem::path& path) : m_(read_cache(path)) {}

  PredictionMatrix predict(std::span<const ImageBuffer> images) override {
    if (images.size() != m_.n_objects())
      throw AdapterError("matrix file holds " + std::to_string(m_.n_objects()) + " rows but " +
                         std::to_string(images.size()) + " images were requested");
    return m_;
  }

 private:
  PredictionMatrix m_;
};

// Subprocess wire protocol, newline-delimited text headers with binary bodies:
//   client -> "HELLO 1\n"                   server -> "READY 1\n"
//   client -> "PREDICT <n> <h> <w> <c>\n" + n TTAIMG01 records
//   server -> "PROBS <n> <k>\n" + n*k little-endian f32
// A server that cannot answer replies "ERROR <message>\n".

inline constexpr int kProtocolVersion = 1;

/// Server side of the protocol; returns when the client closes the stream.
inline void serve_protocol(ModelAdapter& model, std::istream& in, std::ostream& out) {
  std::string line;
  if (!std::getline(in, line)) return;
  if (line != "HELLO " + std::to_string(kProtocolVersion)) {
    out << "ERROR expected HELLO " << kProtocolVersion << "\n" << std::flush;
    return;
  }
  out << "READY " << kProtocolVersion << "\n" << std::flush;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string verb;
    std::size_t n = 0, h = 0, w = 0, c = 0;
    if (!(ls >> verb >> n >> h >> w >> c) || verb != "PREDICT") {
      out << "ERROR bad request '" << line << "'\n" << std::flush;
      return;
    }
    std::vector<ImageBuffer> images(n);
    try {
      for (auto& img : images) {
        if (!read_raw_image(in, img)) throw DataError("stream ended inside a request");
        if (img.height() != h || img.width() != w || img.channels() != c)
          throw DataError("image shape does not match the PREDICT header");
      }
      const PredictionMatrix m = model.predict(images);
      const auto payload = encode_f32_payload(m);
      out << "PROBS " << m.n_objects() << ' ' << m.n_classes() << '\n';
      out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
      out.flush();
    } catch (const std::exception& e) {
      out << "ERROR " << e.what() << "\n" << std::flush;
      return;
    }
  }
}

/// Client side: spawns `/bin/sh -c command` and talks over its stdin/stdout.
/// Requests are serialized; one is in flight at a time.
class SubprocessAdapter : public ModelAdapter {
 public:
  explicit SubprocessAdapter(const std::string& command) : command_(command) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) throw AdapterError("pipe() failed");
    pid_ = ::fork();
    if (pid_ < 0) throw AdapterError("fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    to_ = ::fdopen(to_child[1], "wb");
    from_ = ::fdopen(from_child[0], "rb");
    if (!to_ || !from_) throw AdapterError("fdopen() failed");
    send("HELLO " + std::to_string(kProtocolVersion) + "\n");
    const std::string reply = read_line();
    if (reply != "READY " + std::to_string(kProtocolVersion))
      throw AdapterError("model server '" + command_ + "' failed the handshake: got '" + reply + "'");
  }

  SubprocessAdapter(const SubprocessAdapter&) = delete;
  SubprocessAdapter& operator=(const SubprocessAdapter&) = delete;

  ~SubprocessAdapter() override {
    if (to_) std::fclose(to_);
    if (from_) std::fclose(from_);
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  PredictionMatrix predict(std::span<const ImageBuffer> images) override {
    std::lock_guard lock(mu_);
    const ImageBuffer empty;
    const ImageBuffer& first = images.empty() ? empty : images.front();
    std::ostringstream req;
    req << "PREDICT " << images.size() << ' ' << first.height() << ' ' << first.width() << ' '
        << first.channels() << '\n';
    for (const auto& img : images) {
      if (!img.same_shape(first)) throw AdapterError("all images of one request must share a shape");
      write_raw_image(req, img);
    }
    send(req.str());
    const std::string header = read_line();
    std::istringstream ls(header);
    std::string verb;
    std::size_t n = 0, k = 0;
    if (!(ls >> verb >> n >> k) || verb != "PROBS")
      throw AdapterError("model server replied '" + header + "' to PREDICT");
    if (n != images.size())
      throw AdapterError("model server answered " + std::to_string(n) + " rows for " +
                         std::to_string(images.size()) + " images");
    std::vector<unsigned char> payload(n * k * 4);
    if (!payload.empty() && std::fread(payload.data(), 1, payload.size(), from_) != payload.size())
      throw AdapterError("model server closed the stream mid-response");
    std::vector<double> values(n * k);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const std::uint32_t bits = detail::get_u32(payload.data() + 4 * j);
      float f;
      std::memcpy(&f, &bits, 4);
      values[j] = f;
    }
    return PredictionMatrix(n, k, std::move(values));
  }

 private:
  void send(const std::string& bytes) {
    if (std::fwrite(bytes.data(), 1, bytes.size(), to_) != bytes.size() || std::fflush(to_) != 0)
      throw AdapterError("cannot write to model server '" + command_ + "'");
  }

  std::string read_line() {
    std::string line;
    for (int ch = std::fgetc(from_); ch != EOF && ch != '\n'; ch = std::fgetc(from_))
      line.push_back(static_cast<char>(ch));
    if (line.empty() && std::feof(from_))
      throw AdapterError("model server '" + command_ + "' closed the connection");
    return line;
  }

  std::string command_;
  pid_t pid_ = -1;
  std::FILE* to_ = nullptr;
  std::FILE* from_ = nullptr;
  std::mutex mu_;
};

/// Averages n_draws stochastic applications of `s` per object. Object i, draw d
/// uses the stream derive_seed(seed, {s.id, i, d}), so results do not depend on
/// batching or thread scheduling.
inline PredictionMatrix predict_under_subpolicy(ModelAdapter& adapter, std::span<const ImageBuffer> images,
                                                const SubPolicy& s, std::uint64_t seed,
                                                std::size_t n_draws = 1, const ApplyConfig& cfg = {}) {
  if (n_draws < 1) throw UsageError("n_draws must be >= 1");
  const std::string ctx = "sub-policy " + std::to_string(s.id) + ": ";
  try {
    std::vector<PredictionMatrix> draws;
    draws.reserve(n_draws);
    std::vector<ImageBuffer> batch(images.size());
    for (std::size_t d = 0; d < n_draws; ++d) {
      for (std::size_t i = 0; i < images.size(); ++i) {
        Rng rng(derive_seed(seed, {s.id, i, d}));
        batch[i] = apply_subpolicy(images[i], s, rng, cfg);
      }
      draws.push_back(adapter.predict(batch));
      if (draws.back().n_objects() != images.size())
        throw AdapterError("adapter returned " + std::to_string(draws.back().n_objects()) + " rows for " +
                           std::to_string(images.size()) + " images");
    }
    return n_draws == 1 ? std::move(draws.front()) : average_predictions(draws);
  } catch (const AdapterError& e) {
    throw AdapterError(ctx + e.what());
  } catch (const DataError& e) {
    throw DataError(ctx + e.what());
  } catch (const UsageError& e) {
    throw UsageError(ctx + e.what());
  }
}

}  // namespace tta
