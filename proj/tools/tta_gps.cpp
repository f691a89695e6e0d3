// tta-gps: pool generation, prediction caching, greedy policy search,
// evaluation and policy application from the command line.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "tta/tta.hpp"

namespace fs = std::filesystem;
using namespace tta;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Write-then-rename so an interrupted run never leaves a half-written artifact.
void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    os << text;
    if (!os) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

fs::path cache_file(const fs::path& dir, std::size_t id) {
  char name[32];
  std::snprintf(name, sizeof name, "sp_%06zu.tpc", id);
  return dir / name;
}

std::unique_ptr<ModelAdapter> make_adapter(const std::string& spec, const std::string& model_path) {
  if (spec == "builtin") {
    if (model_path.empty()) throw UsageError("--adapter builtin needs --model <file> (see `tta-gps train`)");
    return std::make_unique<ToyClassifier>(ToyClassifier::load(model_path));
  }
  if (spec.starts_with("file:")) return std::make_unique<MatrixFileAdapter>(fs::path(spec.substr(5)));
  if (spec.starts_with("subprocess:")) return std::make_unique<SubprocessAdapter>(spec.substr(11));
  throw UsageError("unknown adapter '" + spec + "' (expected builtin, file:<path> or subprocess:<cmd>)");
}

std::vector<ImageBuffer> read_images(const fs::path& path) {
  if (path.extension() == ".png") return {load_image(path)};
  return load_image_set(path);
}

// Reads the cached matrix of every listed id; names all missing ids at once.
std::vector<PredictionMatrix> load_cached(const fs::path& dir, std::span<const std::size_t> ids) {
  std::vector<std::size_t> missing;
  for (auto id : ids)
    if (!fs::exists(cache_file(dir, id))) missing.push_back(id);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + std::to_string(missing[i]);
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw DataError("cache " + dir.string() + " is incomplete; missing sub-policy ids: " + list);
  }
  std::vector<PredictionMatrix> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(read_cache(cache_file(dir, id)));
  return out;
}

std::vector<std::size_t> policy_ids(const Policy& p) {
  std::vector<std::size_t> ids;
  for (const auto& s : p.subpolicies) ids.push_back(s.id);
  return ids;
}

struct Options {
  std::uint64_t seed = 0;
  std::size_t workers = default_workers();
  std::string out;

  // pool
  std::string recipe;
  bool identity = false;
  std::string style = "cifar";
  std::string preset;
  std::size_t crop_flip_samples = 20;

  // synth / train
  std::size_t count = 100;
  std::uint64_t tag = 0;
  std::size_t side = 32;
  std::string images;
  std::string labels;
  std::size_t iterations = ToyTrainConfig{}.iterations;
  std::string model;

  // cache
  std::string pool;
  std::string cache_dir;
  std::string split = "val";
  std::string adapter = "builtin";
  std::size_t draws = 1;

  // search / eval
  std::string objective = "cll";
  std::size_t T = 0;  // 0: by pool style
  std::string trace;
  std::string policy;
  std::size_t splits = 5;
  std::string corruption_dir;
  std::string baseline_table;
  std::string table_out;

  // apply
  std::size_t index = 0;
  std::string in;
};

int cmd_synth(const Options& o) {
  const auto data = make_shapes_dataset(o.count, o.seed, o.tag, o.side);
  save_image_set(o.images, data.images);
  save_labels(o.labels, data.labels);
  std::cout << "wrote " << data.images.size() << " images to " << o.images << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const auto images = read_images(o.images);
  const auto labels = load_labels(o.labels);
  ToyTrainConfig cfg;
  cfg.iterations = o.iterations;
  cfg.seed = o.seed;
  // Light augmentation: one padded-crop-and-flip copy of every image.
  std::vector<ImageBuffer> x = images;
  LabelVector y = labels;
  for (std::size_t i = 0; i < images.size() && images.size() == labels.size(); ++i) {
    Rng rng(derive_seed(o.seed, {i}));
    x.push_back(imageops::random_crop_flip(images[i], 4, rng));
    y.push_back(labels[i]);
  }
  const auto model = ToyClassifier::train(x, y, cfg);
  model.save(o.out);
  std::cout << "trained on " << x.size() << " images, " << model.n_classes() << " classes\n";
  return 0;
}

int cmd_pool(const Options& o) {
  Policy pool;
  Rng rng(o.seed);
  if (!o.preset.empty()) {
    if (!o.recipe.empty()) throw UsageError("--preset and --recipe are mutually exclusive");
    auto preset = preset_policy(parse_preset_name(o.preset), o.crop_flip_samples);
    if (auto* p = std::get_if<Policy>(&preset))
      pool = *p;
    else
      pool.subpolicies = generate_pool(std::get<PoolRecipe>(preset), rng);
  } else {
    if (o.recipe.empty()) throw UsageError("pool needs --recipe or --preset");
    const auto style = parse_policy_style(o.style);
    if (!style) throw UsageError("unknown style '" + o.style + "' (expected cifar, imagenet or bare)");
    PoolRecipe recipe{parse_recipe_segments(o.recipe), o.identity, *style};
    pool.subpolicies = generate_pool(recipe, rng);
  }
  write_text(o.out, serialize_policy(pool));
  std::cout << pool.subpolicies.size() << '\n';
  return 0;
}

int cmd_cache(const Options& o) {
  const Policy pool = parse_policy(read_text(o.pool));
  const auto images = read_images(o.images);
  auto adapter = make_adapter(o.adapter, o.model);
  const fs::path dir = o.cache_dir;
  fs::create_directories(dir);

  // One stream per split so val and test draws differ under the same --seed.
  const std::uint64_t seed = derive_seed(o.seed, {fnv1a64({reinterpret_cast<const unsigned char*>(o.split.data()),
                                                           o.split.size()})});
  std::atomic<std::size_t> written{0};
  parallel_for(pool.subpolicies.size(), o.workers, [&](std::size_t b) {
    const SubPolicy& s = pool.subpolicies[b];
    const fs::path path = cache_file(dir, s.id);
    if (fs::exists(path)) {
      try {
        if (read_cache(path).n_objects() == images.size()) return;
      } catch (const DataError&) {
        // Unreadable or stale: recompute below.
      }
    }
    write_cache(predict_under_subpolicy(*adapter, images, s, seed, o.draws), path);
    ++written;
  });
  std::cout << "cached " << written.load() << " of " << pool.subpolicies.size() << " sub-policies in "
            << dir.string() << '\n';
  return 0;
}

int cmd_search(const Options& o) {
  const Policy pool = parse_policy(read_text(o.pool));
  const auto ids = policy_ids(pool);
  const auto cands = load_cached(o.cache_dir, ids);
  const auto y = load_labels(o.labels);
  // Default policy sizes: 100 sub-policies for CIFAR-style pools, 20 otherwise.
  std::size_t T = o.T;
  if (T == 0) T = !pool.subpolicies.empty() && pool.subpolicies[0].style == PolicyStyle::Cifar ? 100 : 20;
  const auto res = greedy_search(cands, y, T, parse_objective(o.objective), o.workers);

  Policy out;
  for (auto b : res.ids) out.subpolicies.push_back(pool.subpolicies[b]);
  // Trace lines name sub-policy ids, not pool positions.
  SearchTrace trace = res.trace;
  for (auto& step : trace.steps) step.chosen_id = pool.subpolicies[step.chosen_id].id;
  write_text(o.out, serialize_policy(out));
  if (!o.trace.empty()) write_text(o.trace, serialize_trace(trace));
  std::cout << serialize_trace(trace);
  return 0;
}

PredictionMatrix policy_average(const Policy& p, const Options& o, ModelAdapter* adapter,
                                const std::vector<ImageBuffer>& images, const fs::path& cache_dir) {
  if (p.subpolicies.empty()) throw DataError("policy " + o.policy + " is empty");
  if (adapter == nullptr) {
    const auto ids = policy_ids(p);
    return average_predictions(load_cached(cache_dir, ids));
  }
  std::vector<PredictionMatrix> preds(p.subpolicies.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    preds[i] = predict_under_subpolicy(*adapter, images, p.subpolicies[i], o.seed, o.draws);
  return average_predictions(preds);
}

// Corruption caches live in <dir>/<corruption>-<severity>/, severities 1..5.
CorruptionErrorTable corruption_table(const Policy& p, const Options& o, const LabelVector& y) {
  static const std::regex name_re(R"((.+)-([1-5]))");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(o.corruption_dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  CorruptionErrorTable t;
  for (const auto& d : dirs) {
    std::smatch m;
    const std::string name = d.filename().string();
    if (!std::regex_match(name, m, name_re))
      throw DataError("corruption directory '" + name + "' is not named <corruption>-<severity>");
    const auto avg = policy_average(p, o, nullptr, {}, d);
    t.set(m[1].str(), static_cast<std::size_t>(std::stoi(m[2].str())), 1.0 - accuracy(avg, y));
  }
  if (t.corruptions().empty()) throw DataError("no corruption caches under " + o.corruption_dir);
  return t;
}

int cmd_eval(const Options& o) {
  const Policy p = parse_policy(read_text(o.policy));
  const auto y = load_labels(o.labels);
  std::unique_ptr<ModelAdapter> adapter;
  std::vector<ImageBuffer> images;
  if (o.cache_dir.empty()) {
    if (o.images.empty()) throw UsageError("eval needs --cache-dir or --images with an adapter");
    images = read_images(o.images);
    adapter = make_adapter(o.adapter, o.model);
  }
  const auto avg = policy_average(p, o, adapter.get(), images, o.cache_dir);
  std::string report = serialize_report(test_time_cross_validation(avg, y, o.splits, o.seed));

  if (!o.corruption_dir.empty()) {
    const auto table = corruption_table(p, o, y);
    if (!o.table_out.empty()) write_text(o.table_out, serialize_corruption_table(table));
    std::ostringstream os;
    os.precision(10);
    os << "muCE " << mean_corruption_error(table) << '\n';
    if (!o.baseline_table.empty()) {
      const auto baseline = load_corruption_table(o.baseline_table);
      os << "mCE " << mean_corruption_error(table, &baseline) << '\n';
    }
    report += os.str();
  } else if (!o.baseline_table.empty()) {
    throw UsageError("--baseline-table needs --corruption-dir");
  }
  if (!o.out.empty()) write_text(o.out, report);
  std::cout << report;
  return 0;
}

int cmd_apply(const Options& o) {
  const Policy p = parse_policy(read_text(o.policy));
  const SubPolicy& s = subpolicy_at(p, o.index);
  Rng rng(derive_seed(o.seed, {s.id}));
  save_image(o.out, apply_subpolicy(load_image(o.in), s, rng));
  return 0;
}

int cmd_serve(const Options& o) {
  ToyClassifier model = ToyClassifier::load(o.model);
  std::ios::sync_with_stdio(false);
  serve_protocol(model, std::cin, std::cout);
  return 0;
}

int cmd_demo(const Options& o) {
  DeskDemoConfig cfg;
  cfg.seed = o.seed;
  cfg.workers = o.workers;
  if (o.T > 0) cfg.policy_size = o.T;
  cfg.objective = parse_objective(o.objective);
  cfg.n_splits = o.splits;
  const auto r = run_desk_demo(cfg);
  std::ostringstream os;
  os.precision(6);
  os << "clean val accuracy " << r.clean_val_accuracy << '\n';
  auto row = [&](const char* name, const MetricReport& m) {
    os << name << " accuracy " << m.accuracy << " ll " << m.log_likelihood << " cll " << m.calibrated_ll
       << " tau " << m.tau.tau << '\n';
  };
  row("gps      ", r.gps);
  row("crop-flip", r.crop_flip);
  row("identity ", r.identity);
  os << "policy";
  for (auto id : r.policy_ids) os << ' ' << id;
  os << '\n';
  if (!o.trace.empty()) write_text(o.trace, serialize_trace(r.trace));
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Greedy policy search for test-time augmentation"};
  app.require_subcommand(1);
  Options o;

  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
  auto workers = [&](CLI::App* c) {
    c->add_option("--workers", o.workers, "Worker threads (default: $TTA_GPS_WORKERS or 1)")
        ->check(CLI::PositiveNumber);
  };
  auto adapter = [&](CLI::App* c) {
    c->add_option("--adapter", o.adapter, "builtin | file:<path> | subprocess:<cmd>")->capture_default_str();
    c->add_option("--model", o.model, "Model file for the builtin adapter");
    c->add_option("--draws", o.draws, "Stochastic draws averaged per sub-policy")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic shapes dataset");
  synth->add_option("--count", o.count)->capture_default_str();
  synth->add_option("--tag", o.tag, "Split tag; different tags give disjoint draws")->capture_default_str();
  synth->add_option("--side", o.side)->capture_default_str()->check(CLI::Range(8, 512));
  synth->add_option("--images", o.images, "Output image set")->required();
  synth->add_option("--labels", o.labels, "Output labels")->required();
  seed(synth);

  auto* train = app.add_subcommand("train", "Train the builtin classifier");
  train->add_option("--images", o.images)->required();
  train->add_option("--labels", o.labels)->required();
  train->add_option("--iterations", o.iterations)->capture_default_str();
  train->add_option("--out", o.out, "Model file")->required();
  seed(train);

  auto* pool = app.add_subcommand("pool", "Generate a sub-policy pool or preset policy");
  pool->add_option("--recipe", o.recipe, "Segments count:N:M[,...]; count:scf for scale-crop-flip only");
  pool->add_flag("--identity", o.identity, "Append the identity sub-policy");
  pool->add_option("--style", o.style, "cifar | imagenet | bare")->capture_default_str();
  pool->add_option("--preset", o.preset, "central-crop | crop-flip | 5-crop | 10-crop");
  pool->add_option("--crop-flip-samples", o.crop_flip_samples)->capture_default_str();
  pool->add_option("--out", o.out)->required();
  seed(pool);

  auto* cache = app.add_subcommand("cache", "Cache predictions under every sub-policy of a pool");
  cache->add_option("--pool", o.pool)->required();
  cache->add_option("--images", o.images)->required();
  cache->add_option("--cache-dir", o.cache_dir)->required();
  cache->add_option("--split", o.split, "Split name (val, test, fog-3, ...); selects the random stream")->capture_default_str();
  adapter(cache);
  seed(cache);
  workers(cache);

  auto* search = app.add_subcommand("search", "Greedy policy search over a cached pool");
  search->add_option("--pool", o.pool)->required();
  search->add_option("--cache-dir", o.cache_dir, "Directory holding sp_*.tpc files")->required();
  search->add_option("--labels", o.labels)->required();
  search->add_option("--objective", o.objective, "acc | ll | cll")->capture_default_str();
  search->add_option("--T", o.T, "Policy size (default 100 for cifar pools, 20 otherwise)");
  search->add_option("--out", o.out, "Policy file")->required();
  search->add_option("--trace", o.trace, "Trace file");
  workers(search);

  auto* eval = app.add_subcommand("eval", "Evaluate a policy with test-time cross-validation");
  eval->add_option("--policy", o.policy)->required();
  eval->add_option("--labels", o.labels)->required();
  eval->add_option("--cache-dir", o.cache_dir, "Directory holding sp_*.tpc files");
  eval->add_option("--images", o.images, "Images to predict when no cache is given");
  eval->add_option("--splits", o.splits)->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--corruption-dir", o.corruption_dir, "Directories <corruption>-<severity> of caches");
  eval->add_option("--baseline-table", o.baseline_table, "Baseline corruption error table for mCE");
  eval->add_option("--table-out", o.table_out, "Write the policy's corruption error table");
  eval->add_option("--out", o.out, "Report file");
  adapter(eval);
  seed(eval);

  auto* apply = app.add_subcommand("apply", "Apply one sub-policy of a policy to an image");
  apply->add_option("--policy", o.policy)->required();
  apply->add_option("--index", o.index)->capture_default_str();
  apply->add_option("--in", o.in)->required();
  apply->add_option("--out", o.out)->required();
  seed(apply);

  auto* serve = app.add_subcommand("serve", "Serve a builtin model over the subprocess protocol");
  serve->add_option("--model", o.model)->required();

  auto* demo = app.add_subcommand("demo", "Desk-scale end-to-end run on synthetic shapes");
  demo->add_option("--T", o.T, "Policy size (default 20)");
  demo->add_option("--objective", o.objective)->capture_default_str();
  demo->add_option("--splits", o.splits)->capture_default_str()->check(CLI::PositiveNumber);
  demo->add_option("--trace", o.trace);
  seed(demo);
  workers(demo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*pool) return cmd_pool(o);
    if (*cache) return cmd_cache(o);
    if (*search) return cmd_search(o);
    if (*eval) return cmd_eval(o);
    if (*apply) return cmd_apply(o);
    if (*serve) return cmd_serve(o);
    if (*demo) return cmd_demo(o);
  } catch (const Error& e) {
    std::cerr << "tta-gps: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "tta-gps: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const std::out_of_range& e) {
    std::cerr << "tta-gps: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kUsage);
  }
  return static_cast<int>(ExitCode::kUsage);
}
