#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "tta/adapter.hpp"
#include "tta/policy.hpp"
#include "tta/synthetic.hpp"

using namespace tta;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tta_pred_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Always answers the uniform distribution.
class UniformAdapter : public ModelAdapter {
 public:
  explicit UniformAdapter(std::size_t k) : k_(k) {}
  PredictionMatrix predict(std::span<const ImageBuffer> images) override {
    return PredictionMatrix(images.size(), k_, 1.0 / static_cast<double>(k_));
  }

 private:
  std::size_t k_;
};

// Two separable classes on 4x4 images: dark vs bright, with noise.
LabeledImages separable_set(std::size_t n, std::uint64_t seed) {
  LabeledImages out;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(i % 2);
    ImageBuffer img(4, 4, 3);
    for (auto& p : img.data())
      p = static_cast<std::uint8_t>((label ? 150.0 : 60.0) + rng.uniform(-40.0, 40.0));
    out.images.push_back(img);
    out.labels.push_back(label);
  }
  return out;
}

}  // namespace

TEST(AveragePredictions, BasicCases) {
  PredictionMatrix a(1, 3, std::vector<double>{1, 0, 0});
  PredictionMatrix b(1, 3, std::vector<double>{0, 1, 0});
  const std::vector<PredictionMatrix> one{a};
  EXPECT_EQ(average_predictions(one), a);
  const std::vector<PredictionMatrix> two{a, b};
  EXPECT_EQ(average_predictions(two), PredictionMatrix(1, 3, std::vector<double>{0.5, 0.5, 0}));
  const std::vector<PredictionMatrix> copies(4, b);
  EXPECT_EQ(average_predictions(copies), b);
  EXPECT_THROW(average_predictions(std::span<const PredictionMatrix>{}), DataError);
  const std::vector<PredictionMatrix> bad{a, PredictionMatrix(2, 3)};
  EXPECT_THROW(average_predictions(bad), DataError);
}

TEST(AveragePredictions, SimplexAndPermutationInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto ms = oracle::random_candidates(5, 7, 4, rng);
    const auto avg = average_predictions(ms);
    EXPECT_NO_THROW(check_simplex(avg));
    std::reverse(ms.begin(), ms.end());
    const auto rev = average_predictions(ms);
    for (std::size_t j = 0; j < avg.data().size(); ++j) EXPECT_NEAR(avg.data()[j], rev.data()[j], 1e-15);
  }
}

TEST(RunningMean, MatchesBatchMean) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto ms = oracle::random_candidates(9, 11, 5, rng);
    RunningMean rm(11, 5);
    for (std::size_t t = 0; t < ms.size(); ++t) {
      rm.add(ms[t]);
      const auto batch = oracle::batch_mean(std::span(ms).first(t + 1));
      for (std::size_t j = 0; j < batch.data().size(); ++j)
        ASSERT_NEAR(rm.mean().data()[j], batch.data()[j], 1e-12);
    }
  }
}

TEST(RunningMean, EnsemblePreAveragingCommutes) {
  // Members x sub-policies: mean over members then sub-policies equals the flat mean.
  Rng rng(4);
  const auto member_a = oracle::random_candidates(3, 6, 3, rng);
  const auto member_b = oracle::random_candidates(3, 6, 3, rng);
  std::vector<PredictionMatrix> ensembled, flat;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::vector<PredictionMatrix> pair{member_a[s], member_b[s]};
    ensembled.push_back(average_predictions(pair));
    flat.push_back(member_a[s]);
    flat.push_back(member_b[s]);
  }
  const auto lhs = average_predictions(ensembled);
  const auto rhs = average_predictions(flat);
  for (std::size_t j = 0; j < lhs.data().size(); ++j) EXPECT_NEAR(lhs.data()[j], rhs.data()[j], 1e-15);
}

TEST(CacheFormat, RoundTripIsBitExact) {
  Rng rng(9);
  const auto m = oracle::random_candidates(1, 1000, 100, rng)[0];
  const auto dir = temp_dir("roundtrip");
  write_cache(m, dir / "a.tpc");
  const auto back = read_cache(dir / "a.tpc");
  ASSERT_TRUE(back.same_shape(m));
  for (std::size_t j = 0; j < m.data().size(); ++j)
    ASSERT_EQ(back.data()[j], static_cast<double>(static_cast<float>(m.data()[j])));
  write_cache(back, dir / "b.tpc");
  std::ifstream fa(dir / "a.tpc", std::ios::binary), fb(dir / "b.tpc", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(fs::file_size(dir / "a.tpc"), 24u + 1000u * 100u * 4u);
  EXPECT_NO_THROW(check_simplex(back, 1e-5));
}

TEST(CacheFormat, RejectsCorruptFiles) {
  PredictionMatrix m(2, 2, std::vector<double>{0.25, 0.75, 0.5, 0.5});
  std::string bytes = encode_cache(m);
  const auto as_span = [](const std::string& s) {
    return std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size());
  };
  EXPECT_EQ(decode_cache(as_span(bytes), "mem"), m);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(decode_cache(as_span(wrong_magic), "mem"), DataError);

  const std::string truncated = bytes.substr(0, bytes.size() - 5);
  try {
    decode_cache(as_span(truncated), "mem");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 40"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 35"), std::string::npos) << msg;
  }

  std::string flipped = bytes;
  flipped[30] ^= 0x01;
  EXPECT_THROW(decode_cache(as_span(flipped), "mem"), DataError);
  EXPECT_THROW(decode_cache(as_span(bytes.substr(0, 10)), "mem"), DataError);
}

TEST(PredictUnderSubpolicy, IdentityGivesCleanPredictions) {
  const auto data = make_shapes_dataset(40, 1, 0, 8);
  const auto model = ToyClassifier::train(data.images, data.labels, {20, 0.5, 1e-4, 0});
  ToyClassifier m = model;
  const SubPolicy clean = identity_subpolicy(PolicyStyle::Bare);
  EXPECT_EQ(predict_under_subpolicy(m, data.images, clean, 5), model.predict_const(data.images));
  SubPolicy cifar_identity = identity_subpolicy(PolicyStyle::Cifar);
  ApplyConfig no_pos;
  no_pos.positional = false;
  EXPECT_EQ(predict_under_subpolicy(m, data.images, cifar_identity, 5, 1, no_pos),
            model.predict_const(data.images));
}

TEST(PredictUnderSubpolicy, DeterministicAndDrawAveraging) {
  const auto data = make_shapes_dataset(30, 2, 0, 8);
  ToyClassifier m = ToyClassifier::train(data.images, data.labels, {20, 0.5, 1e-4, 0});
  Rng rng(3);
  const auto s = sample_subpolicy(3, 45.0, PolicyStyle::Cifar, rng);
  EXPECT_EQ(predict_under_subpolicy(m, data.images, s, 17, 3), predict_under_subpolicy(m, data.images, s, 17, 3));
  EXPECT_NE(predict_under_subpolicy(m, data.images, s, 17), predict_under_subpolicy(m, data.images, s, 18));
  EXPECT_NO_THROW(check_simplex(predict_under_subpolicy(m, data.images, s, 17, 3)));
  EXPECT_THROW(predict_under_subpolicy(m, data.images, s, 17, 0), UsageError);

  UniformAdapter uniform(4);
  const auto u = predict_under_subpolicy(uniform, data.images, s, 1, 2);
  for (double p : u.data()) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(PredictUnderSubpolicy, AdapterErrorsNameTheSubpolicy) {
  const auto data = make_shapes_dataset(4, 2, 0, 8);
  MatrixFileAdapter wrong_rows(PredictionMatrix(3, 2, 0.5));
  SubPolicy s = identity_subpolicy(PolicyStyle::Bare);
  s.id = 42;
  try {
    predict_under_subpolicy(wrong_rows, data.images, s, 0);
    FAIL();
  } catch (const AdapterError& e) {
    EXPECT_NE(std::string(e.what()).find("sub-policy 42"), std::string::npos);
  }
}

TEST(ToyClassifier, SeparableDataAgainstLeastSquaresBaseline) {
  const auto data = separable_set(200, 7);
  const double ls_acc = oracle::least_squares_training_accuracy(data.images, data.labels);
  ASSERT_GE(ls_acc, 0.95) << "fixture must be linearly separable per the baseline";
  const auto model = ToyClassifier::train(data.images, data.labels, {100, 0.5, 1e-4, 0});
  const auto p = model.predict_const(data.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.labels.size(); ++i) hits += p.argmax(i) == data.labels[i];
  EXPECT_GE(static_cast<double>(hits) / 200.0, 0.95);
  EXPECT_NO_THROW(check_simplex(p, 1e-9));
}

TEST(ToyClassifier, TrainingOrderDoesNotMatter) {
  auto data = make_shapes_dataset(60, 3, 0, 8);
  const auto a = ToyClassifier::train(data.images, data.labels, {15, 0.5, 1e-4, 0});
  std::reverse(data.images.begin(), data.images.end());
  std::reverse(data.labels.begin(), data.labels.end());
  const auto b = ToyClassifier::train(data.images, data.labels, {15, 0.5, 1e-4, 0});
  ASSERT_EQ(a.weights().size(), b.weights().size());
  for (std::size_t j = 0; j < a.weights().size(); ++j) ASSERT_EQ(a.weights()[j], b.weights()[j]);
}

TEST(ToyClassifier, RejectsDegenerateData) {
  ImageBuffer img(2, 2, 3, 10);
  const std::vector<ImageBuffer> imgs{img, img};
  EXPECT_THROW(ToyClassifier::train(imgs, LabelVector{1, 1}), DataError);
  EXPECT_THROW(ToyClassifier::train(imgs, LabelVector{1}), DataError);
}

TEST(ToyClassifier, SaveLoadRoundTrip) {
  const auto data = make_shapes_dataset(30, 4, 0, 8);
  const auto model = ToyClassifier::train(data.images, data.labels, {10, 0.5, 1e-4, 0});
  const auto dir = temp_dir("model");
  model.save(dir / "m.bin");
  const auto back = ToyClassifier::load(dir / "m.bin");
  EXPECT_EQ(back.predict_const(data.images), model.predict_const(data.images));
}

TEST(SubprocessProtocol, InMemoryServer) {
  const auto data = make_shapes_dataset(5, 5, 0, 8);
  ToyClassifier model = ToyClassifier::train(data.images, data.labels, {10, 0.5, 1e-4, 0});
  std::stringstream in, out;
  in << "HELLO 1\nPREDICT 5 8 8 3\n";
  for (const auto& img : data.images) write_raw_image(in, img);
  serve_protocol(model, in, out);
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(line, "READY 1");
  std::getline(out, line);
  EXPECT_EQ(line, "PROBS 5 3");
  std::string rest((std::istreambuf_iterator<char>(out)), {});
  EXPECT_EQ(rest.size(), 5u * 3u * 4u);

  std::stringstream bad_in("HELLO 9\n"), bad_out;
  serve_protocol(model, bad_in, bad_out);
  EXPECT_EQ(bad_out.str().rfind("ERROR", 0), 0u);
}

TEST(SubprocessAdapter, MatchesInProcessModel) {
  const auto data = make_shapes_dataset(12, 6, 0, 8);
  const auto model = ToyClassifier::train(data.images, data.labels, {10, 0.5, 1e-4, 0});
  const auto dir = temp_dir("subprocess");
  model.save(dir / "m.bin");
  SubprocessAdapter remote(std::string(TTA_GPS_CLI) + " serve --model " + (dir / "m.bin").string());
  const auto local = model.predict_const(data.images);
  for (int rep = 0; rep < 2; ++rep) {
    const auto got = remote.predict(data.images);
    ASSERT_TRUE(got.same_shape(local));
    for (std::size_t j = 0; j < local.data().size(); ++j)
      EXPECT_EQ(got.data()[j], static_cast<double>(static_cast<float>(local.data()[j])));
  }
}

TEST(SubprocessAdapter, HandshakeFailures) {
  EXPECT_THROW(SubprocessAdapter("echo NOPE"), AdapterError);
  EXPECT_THROW(SubprocessAdapter("true"), AdapterError);
}

TEST(MatrixFileAdapter, ServesStoredMatrix) {
  PredictionMatrix m(2, 2, std::vector<double>{0.25, 0.75, 0.5, 0.5});
  const auto dir = temp_dir("matrixfile");
  write_cache(m, dir / "m.tpc");
  MatrixFileAdapter adapter(dir / "m.tpc");
  const std::vector<ImageBuffer> two(2, ImageBuffer(2, 2, 3));
  EXPECT_EQ(adapter.predict(two), m);
  const std::vector<ImageBuffer> three(3, ImageBuffer(2, 2, 3));
  EXPECT_THROW(adapter.predict(three), AdapterError);
}
