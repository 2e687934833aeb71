#include "cli.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "ptsp/attention.hpp"
#include "ptsp/image.hpp"
#include "ptsp/metrics.hpp"
#include "ptsp/patchset.hpp"
#include "ptsp/rng.hpp"
#include "ptsp/similarity.hpp"
#include "ptsp/synthesize.hpp"
#include "ptsp/train.hpp"

namespace fs = std::filesystem;

namespace ptsp::cli {

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  int workers = 1;
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Every run starts by echoing its fully-resolved configuration; with it the
/// run is exactly reproducible.
void echo_config(const std::string& sub, const GlobalOpts& g,
                 const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cerr << "config " << sub << ":";
  for (const auto& [k, v] : kv) std::cerr << ' ' << k << '=' << v;
  std::cerr << " seed=" << g.seed << " workers=" << g.workers << '\n';
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    out.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

DiscretizationScheme parse_scheme(const std::string& text) {
  const std::string usage =
      "bad scheme '" + text + "': want points|weights like 0,64,128,256|1,0.7,0";
  std::vector<std::string> halves = split(text, '|');
  if (halves.size() != 2) throw error(usage);
  std::vector<int> points;
  std::vector<double> weights;
  try {
    for (const std::string& tok : split(halves[0], ','))
      points.push_back(std::stoi(tok));
    for (const std::string& tok : split(halves[1], ','))
      weights.push_back(std::stod(tok));
  } catch (const std::exception&) {
    throw error(usage);
  }
  return DiscretizationScheme::make(std::move(points), std::move(weights));
}

GrayImage load_by_id(const std::string& dir, const std::string& id) {
  fs::path p = fs::path(dir) / (id + ".pgm");
  if (!fs::exists(p)) throw error("no " + id + ".pgm in " + dir);
  return load_pgm(p.string());
}

// ---- synth ----------------------------------------------------------------

struct SynthOpts {
  std::string ndct, out;
  SynthConfig cfg;
};

int run_synth(const GlobalOpts& g, const SynthOpts& o) {
  echo_config("synth", g,
              {{"ndct", o.ndct},
               {"out", o.out},
               {"shift-min", std::to_string(o.cfg.shift_min)},
               {"shift-max", std::to_string(o.cfg.shift_max)},
               {"alpha", fmt_double(o.cfg.alpha)},
               {"smooth-sigma", fmt_double(o.cfg.smooth_sigma)},
               {"noise-sigma", fmt_double(o.cfg.noise_sigma)}});
  o.cfg.validate();
  std::vector<std::string> files = list_image_files(o.ndct);
  if (files.empty()) throw error("no images in " + o.ndct);
  fs::create_directories(o.out);
  struct Row {
    std::string id;
    int dy = 0, dx = 0;
  };
  std::vector<Row> rows(files.size());
  int workers = std::clamp<int>(g.workers, 1, int(files.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < files.size();) {
          GrayImage ndct = load_pgm(files[i]);
          Rng rng(Rng::mix(g.seed, i));
          auto [ldct, shift] = synthesize_ldct(ndct, rng, o.cfg);
          std::string id = image_id_from_path(files[i]);
          save_pgm(ldct, (fs::path(o.out) / (id + ".pgm")).string());
          rows[i] = {id, shift.first, shift.second};
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  std::ofstream csv(fs::path(o.out) / "shifts.csv", std::ios::binary);
  if (!csv) throw error("cannot write shifts.csv in " + o.out);
  csv << "image,dy,dx\n";
  for (const Row& r : rows) csv << r.id << ',' << r.dy << ',' << r.dx << '\n';
  std::cout << "synthesized " << files.size() << " images into " << o.out
            << '\n';
  return 0;
}

// ---- purify ---------------------------------------------------------------

struct PurifyOpts {
  std::string ldct, ndct, ncct, out;
  std::string mode = "ptsp";
  std::string scheme;
  double threshold = 0.85;
  int patch = 64;
  int stride = 32;
  int radius = 8;
  bool flush_edges = false;
};

int run_purify(const GlobalOpts& g, const PurifyOpts& o) {
  echo_config("purify", g,
              {{"ldct", o.ldct},
               {"ndct", o.ndct},
               {"ncct", o.ncct},
               {"out", o.out},
               {"mode", o.mode},
               {"threshold", fmt_double(o.threshold)},
               {"patch", std::to_string(o.patch)},
               {"stride", std::to_string(o.stride)},
               {"radius", std::to_string(o.radius)},
               {"flush-edges", o.flush_edges ? "1" : "0"},
               {"scheme", o.scheme.empty() ? "default" : o.scheme}});
  PurifyConfig cfg;
  if (!o.scheme.empty()) cfg.scheme = parse_scheme(o.scheme);
  cfg.threshold = o.threshold;
  cfg.patch = o.patch;
  cfg.stride = o.stride;
  cfg.search_radius = o.radius;
  cfg.mode = purify_mode_from(o.mode);
  cfg.flush_edges = o.flush_edges;
  cfg.workers = g.workers;
  cfg.validate();
  std::vector<std::string> files = list_image_files(o.ldct);
  if (files.empty()) throw error("no images in " + o.ldct);
  DatasetManifest manifest;
  manifest.scheme = cfg.scheme.fingerprint();
  std::printf("image,enumerated,accepted,accept_rate\n");
  std::size_t tot_enum = 0, tot_acc = 0;
  for (const std::string& file : files) {
    std::string id = image_id_from_path(file);
    GrayImage ldct = load_pgm(file);
    GrayImage ndct = load_by_id(o.ndct, id);
    GrayImage ncct = load_by_id(o.ncct, id);
    std::size_t enumerated =
        enumerate_locs(ldct.height, ldct.width, cfg.patch, cfg.stride,
                       cfg.flush_edges)
            .size();
    std::vector<PatchTriplet> triplets = purify(ldct, ndct, ncct, cfg);
    for (const PatchTriplet& t : triplets) {
      ManifestRecord r;
      r.image_id = id;
      r.top = t.loc.top;
      r.left = t.loc.left;
      r.p = t.loc.size;
      r.ncct_dy = t.ncct_dy;
      r.ncct_dx = t.ncct_dx;
      r.sim_ln = t.sim_ln;
      r.sim_lg = t.sim_lg;
      r.mode = to_string(cfg.mode);
      manifest.records.push_back(std::move(r));
    }
    double rate = enumerated ? double(triplets.size()) / double(enumerated) : 0.0;
    std::printf("%s,%zu,%zu,%.4f\n", id.c_str(), enumerated, triplets.size(),
                rate);
    tot_enum += enumerated;
    tot_acc += triplets.size();
  }
  double rate = tot_enum ? double(tot_acc) / double(tot_enum) : 0.0;
  std::printf("TOTAL,%zu,%zu,%.4f\n", tot_enum, tot_acc, rate);
  write_manifest(manifest, o.out);
  return 0;
}

// ---- extract --------------------------------------------------------------

struct ExtractOpts {
  std::string manifest, ldct, ndct, ncct, out;
};

int run_extract(const GlobalOpts& g, const ExtractOpts& o) {
  echo_config("extract", g,
              {{"manifest", o.manifest},
               {"ldct", o.ldct},
               {"ndct", o.ndct},
               {"ncct", o.ncct},
               {"out", o.out}});
  DatasetManifest manifest = read_manifest(o.manifest);
  std::vector<std::string> ids;
  for (const ManifestRecord& r : manifest.records) ids.push_back(r.image_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  int exported = 0;
  for (const std::string& id : ids) {
    GrayImage ldct = load_by_id(o.ldct, id);
    GrayImage ndct = load_by_id(o.ndct, id);
    GrayImage ncct = load_by_id(o.ncct, id);
    exported += export_patches(manifest, ldct, ndct, ncct, id, o.out);
  }
  std::cout << "exported " << exported << " patch triplets to " << o.out
            << '\n';
  return 0;
}

// ---- stats ----------------------------------------------------------------

struct StatsOpts {
  std::string manifest, csv;
};

int run_stats(const GlobalOpts& g, const StatsOpts& o) {
  echo_config("stats", g, {{"manifest", o.manifest},
                           {"csv", o.csv.empty() ? "-" : o.csv}});
  DatasetManifest manifest = read_manifest(o.manifest);
  std::map<std::string, std::size_t> modes;
  std::array<std::size_t, 20> hist_ln{}, hist_lg{};
  std::map<std::pair<int, int>, std::size_t> offsets;
  auto bin_of = [](double v) {
    return std::clamp(int(v * 20.0), 0, 19);
  };
  for (const ManifestRecord& r : manifest.records) {
    ++modes[r.mode];
    ++hist_ln[std::size_t(bin_of(r.sim_ln))];
    ++hist_lg[std::size_t(bin_of(r.sim_lg))];
    ++offsets[{r.ncct_dy, r.ncct_dx}];
  }
  std::printf("records %zu\n", manifest.records.size());
  for (const auto& [mode, count] : modes)
    std::printf("mode %s %zu\n", mode.c_str(), count);
  auto print_hist = [&](const char* name, const std::array<std::size_t, 20>& h) {
    for (int i = 0; i < 20; ++i) {
      if (!h[std::size_t(i)]) continue;
      std::printf("%s [%.2f,%.2f%c %zu\n", name, i / 20.0, (i + 1) / 20.0,
                  i == 19 ? ']' : ')', h[std::size_t(i)]);
    }
  };
  print_hist("sim_ln", hist_ln);
  print_hist("sim_lg", hist_lg);
  for (const auto& [off, count] : offsets)
    std::printf("offset (%d,%d) %zu\n", off.first, off.second, count);
  if (!o.csv.empty()) {
    std::ofstream csv(o.csv, std::ios::binary);
    if (!csv) throw error("cannot open " + o.csv + " for writing");
    csv << "section,key,value\n";
    csv << "count,records," << manifest.records.size() << '\n';
    for (const auto& [mode, count] : modes)
      csv << "mode," << mode << ',' << count << '\n';
    for (int i = 0; i < 20; ++i)
      if (hist_ln[std::size_t(i)])
        csv << "hist_sim_ln," << i << ',' << hist_ln[std::size_t(i)] << '\n';
    for (int i = 0; i < 20; ++i)
      if (hist_lg[std::size_t(i)])
        csv << "hist_sim_lg," << i << ',' << hist_lg[std::size_t(i)] << '\n';
    for (const auto& [off, count] : offsets)
      csv << "offset," << off.first << ':' << off.second << ',' << count
          << '\n';
  }
  return 0;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckOpts {
  int m = 2, c = 3, d = 4;
  double tol = 1e-5;
  double h = 1e-5;
};

int run_gradcheck(const GlobalOpts& g, const GradcheckOpts& o) {
  echo_config("gradcheck", g,
              {{"m", std::to_string(o.m)},
               {"c", std::to_string(o.c)},
               {"d", std::to_string(o.d)},
               {"step", fmt_double(o.h)},
               {"tol", fmt_double(o.tol)}});
  if (o.m < 1 || o.c < 1 || o.d < 1) throw error("m, c, d must be positive");
  if (!(o.h > 0.0) || !(o.tol > 0.0)) throw error("h and tol must be positive");
  CaBlockProblem problem = CaBlockProblem::random(o.m, o.c, o.d, g.seed);
  GradCheckReport report = grad_check_block(problem, o.h, o.tol);
  std::printf("max_rel_err=%.6g worst=%s\n", report.max_rel_err,
              report.worst_param.c_str());
  for (const GradCheckEntry& f : report.failures)
    std::printf("above tol: %s[%d] rel_err=%.6g\n", f.name.c_str(), f.index,
                f.rel_err);
  bool ok = report.passed(o.tol);
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

// ---- traintoy -------------------------------------------------------------

struct TrainOpts {
  std::string manifest, ldct, ndct, ncct;
  std::string out = "model.bin", curve = "loss.csv";
  int synthetic = 0;
  int patch = 8;
  int steps = 2000;
  int batch = 32;
  int window = 8, channels = 8, hidden = 16;
  double lr = 2e-4, weight_decay = 1e-4;
  std::vector<int> milestones;
};

std::vector<TripletSample> samples_from_manifest(const TrainOpts& o) {
  if (o.ldct.empty() || o.ndct.empty() || o.ncct.empty())
    throw error("--manifest needs --ldct, --ndct and --ncct image dirs");
  DatasetManifest manifest = read_manifest(o.manifest);
  if (manifest.records.empty()) throw error("manifest has no records");
  std::map<std::string, std::array<GrayImage, 3>> cache;
  std::vector<TripletSample> samples;
  samples.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records) {
    auto it = cache.find(r.image_id);
    if (it == cache.end())
      it = cache
               .emplace(r.image_id,
                        std::array<GrayImage, 3>{load_by_id(o.ldct, r.image_id),
                                                 load_by_id(o.ndct, r.image_id),
                                                 load_by_id(o.ncct, r.image_id)})
               .first;
    PatchLoc loc{r.top, r.left, r.p};
    PatchLoc off{r.top + r.ncct_dy, r.left + r.ncct_dx, r.p};
    GrayImage l = crop(it->second[0], loc);
    GrayImage n = crop(it->second[1], r.mode == "rmse" ? off : loc);
    GrayImage gi = crop(it->second[2], r.mode == "rmse" ? loc : off);
    // Byte intensities are normalized to [0,1] here, at the loading edge;
    // everything inside the trainer works on normalized values.
    TripletSample s;
    s.patch = r.p;
    s.ldct.resize(l.pixel_count());
    s.ndct.resize(l.pixel_count());
    s.ncct.resize(l.pixel_count());
    for (std::size_t i = 0; i < l.pixel_count(); ++i) {
      s.ldct[i] = l.data[i] / 255.0;
      s.ndct[i] = n.data[i] / 255.0;
      s.ncct[i] = gi.data[i] / 255.0;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

int run_traintoy(const GlobalOpts& g, const TrainOpts& o) {
  echo_config("traintoy", g,
              {{"manifest", o.manifest.empty() ? "-" : o.manifest},
               {"synthetic", std::to_string(o.synthetic)},
               {"patch", std::to_string(o.patch)},
               {"steps", std::to_string(o.steps)},
               {"batch", std::to_string(o.batch)},
               {"lr", fmt_double(o.lr)},
               {"weight-decay", fmt_double(o.weight_decay)},
               {"window", std::to_string(o.window)},
               {"channels", std::to_string(o.channels)},
               {"hidden", std::to_string(o.hidden)},
               {"out", o.out},
               {"curve", o.curve}});
  if (o.manifest.empty() == (o.synthetic == 0))
    throw error("give exactly one of --manifest or --synthetic N");
  std::vector<TripletSample> samples =
      o.synthetic > 0
          ? synth_triplet_samples(o.synthetic, o.patch, Rng::mix(g.seed, 3))
          : samples_from_manifest(o);
  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.weight_decay = o.weight_decay;
  cfg.batch = o.batch;
  cfg.steps = o.steps;
  cfg.seed = g.seed;
  cfg.milestones = o.milestones;
  TrainResult result = train_toy(samples, cfg, o.window, o.channels, o.hidden);
  save_model(result.model, o.out);
  write_curve_csv(result.curve, o.curve);
  std::printf("trained %d steps: loss %.17g -> %.17g\n", cfg.steps,
              result.curve.front().loss, result.curve.back().loss);
  return 0;
}

// ---- metrics --------------------------------------------------------------

struct MetricsOpts {
  std::string a, b, extractor = "pool8", out;
};

int run_metrics(const GlobalOpts& g, const MetricsOpts& o) {
  echo_config("metrics", g,
              {{"a", o.a},
               {"b", o.b},
               {"extractor", o.extractor},
               {"out", o.out.empty() ? "-" : o.out}});
  MetricsReport report = evaluate(o.a, o.b, o.extractor);
  char line1[192], line2[192];
  std::snprintf(line1, sizeof line1, "frechet,%.17g,%d,%d,%s\n",
                report.frechet, report.n_a, report.n_b,
                report.extractor.c_str());
  std::snprintf(line2, sizeof line2, "mmd2,%.17g,%d,%d,%s\n", report.mmd2,
                report.n_a, report.n_b, report.extractor.c_str());
  std::printf("metric,value,n_a,n_b,extractor\n%s%s", line1, line2);
  if (!o.out.empty()) {
    std::ofstream csv(o.out, std::ios::binary);
    if (!csv) throw error("cannot open " + o.out + " for writing");
    csv << "metric,value,n_a,n_b,extractor\n" << line1 << line2;
  }
  return 0;
}

}  // namespace

int dispatch(std::vector<std::string> args) {
  GlobalOpts g;
  SynthOpts synth;
  PurifyOpts purify;
  ExtractOpts extract;
  StatsOpts stats;
  GradcheckOpts gradcheck;
  TrainOpts traintoy;
  MetricsOpts metrics;

  CLI::App app{"PTSP triplet curation, synthetic LDCT degradation and toy "
               "cross-attention training"};
  app.name("ptsp");
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file ([subcommand] sections)");
  app.allow_config_extras(false);
  app.add_option("--seed", g.seed, "Global random seed")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker thread count")
      ->capture_default_str();

  CLI::App* s = app.add_subcommand("synth",
                                   "Degrade NDCT images into synthetic LDCT");
  s->fallthrough();
  s->add_option("--ndct", synth.ndct, "Clean input image dir")->required();
  s->add_option("--out", synth.out, "Output dir (images + shifts.csv)")
      ->required();
  s->add_option("--shift-min", synth.cfg.shift_min)->capture_default_str();
  s->add_option("--shift-max", synth.cfg.shift_max)->capture_default_str();
  s->add_option("--alpha", synth.cfg.alpha, "Elastic displacement scale")
      ->capture_default_str();
  s->add_option("--smooth-sigma", synth.cfg.smooth_sigma)
      ->capture_default_str();
  s->add_option("--noise-sigma", synth.cfg.noise_sigma)->capture_default_str();

  CLI::App* p = app.add_subcommand("purify", "Select aligned patch triplets");
  p->fallthrough();
  p->add_option("--ldct", purify.ldct, "LDCT image dir")->required();
  p->add_option("--ndct", purify.ndct, "NDCT image dir")->required();
  p->add_option("--ncct", purify.ncct, "NCCT image dir")->required();
  p->add_option("--out", purify.out, "Output manifest (JSONL)")->required();
  p->add_option("--mode", purify.mode, "ptsp, psp or rmse")
      ->capture_default_str();
  p->add_option("--threshold", purify.threshold)->capture_default_str();
  p->add_option("--patch", purify.patch)->capture_default_str();
  p->add_option("--stride", purify.stride)->capture_default_str();
  p->add_option("--radius", purify.radius, "NCCT search radius")
      ->capture_default_str();
  p->add_option("--scheme", purify.scheme,
                "Discretization, points|weights (default 0,64,128,256|1,0.7,0)");
  p->add_flag("--flush-edges", purify.flush_edges,
              "Add border-flush patch row/column");

  CLI::App* e = app.add_subcommand("extract", "Write manifest patches as PGM");
  e->fallthrough();
  e->add_option("--manifest", extract.manifest)->required();
  e->add_option("--ldct", extract.ldct)->required();
  e->add_option("--ndct", extract.ndct)->required();
  e->add_option("--ncct", extract.ncct)->required();
  e->add_option("--out", extract.out)->required();

  CLI::App* st = app.add_subcommand("stats", "Summarize a manifest");
  st->fallthrough();
  st->add_option("--manifest", stats.manifest)->required();
  st->add_option("--csv", stats.csv, "Also write machine-readable CSV");

  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "Finite-difference check of the CA block");
  gc->fallthrough();
  gc->add_option("--m", gradcheck.m, "Window size")->capture_default_str();
  gc->add_option("--c", gradcheck.c, "Channels")->capture_default_str();
  gc->add_option("--d", gradcheck.d, "Projection dim")->capture_default_str();
  gc->add_option("--tol", gradcheck.tol)->capture_default_str();
  gc->add_option("--step", gradcheck.h, "Central-difference step")
      ->capture_default_str();

  CLI::App* t = app.add_subcommand("traintoy", "Train the toy denoiser");
  t->fallthrough();
  t->add_option("--manifest", traintoy.manifest, "Triplet manifest");
  t->add_option("--ldct", traintoy.ldct)->needs("--manifest");
  t->add_option("--ndct", traintoy.ndct)->needs("--manifest");
  t->add_option("--ncct", traintoy.ncct)->needs("--manifest");
  t->add_option("--synthetic", traintoy.synthetic,
                "Generate N synthetic triplets instead of a manifest");
  t->add_option("--patch", traintoy.patch, "Synthetic patch side")
      ->capture_default_str();
  t->add_option("--steps", traintoy.steps)->capture_default_str();
  t->add_option("--batch", traintoy.batch)->capture_default_str();
  t->add_option("--lr", traintoy.lr)->capture_default_str();
  t->add_option("--weight-decay", traintoy.weight_decay)
      ->capture_default_str();
  t->add_option("--milestones", traintoy.milestones,
                "LR decay steps (default 50% and 75%)");
  t->add_option("--window", traintoy.window)->capture_default_str();
  t->add_option("--channels", traintoy.channels)->capture_default_str();
  t->add_option("--hidden", traintoy.hidden)->capture_default_str();
  t->add_option("--out", traintoy.out, "Model dump")->capture_default_str();
  t->add_option("--curve", traintoy.curve, "Loss curve CSV")
      ->capture_default_str();

  CLI::App* m = app.add_subcommand("metrics",
                                   "Distribution distance between image dirs");
  m->fallthrough();
  m->add_option("--a", metrics.a, "First image dir")->required();
  m->add_option("--b", metrics.b, "Second image dir")->required();
  m->add_option("--extractor", metrics.extractor)->capture_default_str();
  m->add_option("--out", metrics.out, "Report CSV path");

  std::vector<const char*> argv;
  argv.push_back("ptsp");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  try {
    if (s->parsed()) return run_synth(g, synth);
    if (p->parsed()) return run_purify(g, purify);
    if (e->parsed()) return run_extract(g, extract);
    if (st->parsed()) return run_stats(g, stats);
    if (gc->parsed()) return run_gradcheck(g, gradcheck);
    if (t->parsed()) return run_traintoy(g, traintoy);
    if (m->parsed()) return run_metrics(g, metrics);
    std::cerr << app.help();
    return 1;
  } catch (const error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << '\n';
    return 2;
  }
}

}  // namespace ptsp::cli
