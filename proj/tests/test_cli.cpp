#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "ptsp/image.hpp"
#include "ptsp/patchset.hpp"
#include "ptsp/rng.hpp"
#include "ptsp/train.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using testutil::fresh_dir;
using testutil::read_file;
using testutil::write_file;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

/// Runs dispatch with fd 1 redirected into a file, so both printf and
/// std::cout output are captured. stderr (the config echo) is left alone.
CliResult run_cli(const std::vector<std::string>& args) {
  static int counter = 0;
  fs::path sink = fs::temp_directory_path() /
                  ("ptsp_cli_out_" + std::to_string(counter++) + ".txt");
  std::fflush(stdout);
  std::cout.flush();
  int saved = dup(1);
  REQUIRE(saved >= 0);
  int fd = open(sink.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  REQUIRE(fd >= 0);
  dup2(fd, 1);
  close(fd);
  CliResult r;
  r.code = ptsp::cli::dispatch(args);
  std::fflush(stdout);
  std::cout.flush();
  dup2(saved, 1);
  close(saved);
  r.out = read_file(sink);
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// One shared end-to-end fixture: three clean textured images pushed
/// through synth, purify (rmse), extract and traintoy. Built lazily so
/// every test case can reference it regardless of execution order.
struct Pipeline {
  fs::path root, ndct, ldct, extract_dir;
  fs::path man, man_again, man_w2;
  fs::path model1, curve1, model2, curve2;
  CliResult synth, purify, purify_again, purify_w2, extract, train1, train2;

  static const Pipeline& get() {
    static Pipeline p;
    return p;
  }

  Pipeline() {
    root = fresh_dir("cli_pipeline");
    ndct = root / "ndct";
    ldct = root / "ldct";
    extract_dir = root / "patches";
    fs::create_directories(ndct);
    const char* ids[] = {"a", "b", "c"};
    for (int i = 0; i < 3; ++i)
      ptsp::save_pgm(oracle::textured_image(96, 96, 100 + std::uint64_t(i)),
                     (ndct / (std::string(ids[i]) + ".pgm")).string());

    synth = run_cli({"synth", "--ndct", ndct.string(), "--out", ldct.string(),
                     "--seed", "7"});

    man = root / "triplets.jsonl";
    man_again = root / "triplets2.jsonl";
    man_w2 = root / "triplets_w2.jsonl";
    std::vector<std::string> base = {
        "purify",     "--ldct", ldct.string(), "--ndct",  ndct.string(),
        "--ncct",     ndct.string(), "--mode", "rmse",    "--patch",
        "32",         "--stride", "16"};
    auto with_out = [&](const fs::path& out,
                        std::vector<std::string> extra = {}) {
      std::vector<std::string> args = base;
      args.insert(args.end(), {"--out", out.string()});
      args.insert(args.end(), extra.begin(), extra.end());
      return args;
    };
    purify = run_cli(with_out(man));
    purify_again = run_cli(with_out(man_again));
    purify_w2 = run_cli(with_out(man_w2, {"--workers", "2"}));

    extract = run_cli({"extract", "--manifest", man.string(), "--ldct",
                       ldct.string(), "--ndct", ndct.string(), "--ncct",
                       ndct.string(), "--out", extract_dir.string()});

    model1 = root / "model1.bin";
    curve1 = root / "curve1.csv";
    model2 = root / "model2.bin";
    curve2 = root / "curve2.csv";
    std::vector<std::string> train = {
        "traintoy", "--manifest", man.string(),  "--ldct",     ldct.string(),
        "--ndct",   ndct.string(), "--ncct",     ndct.string(), "--steps",
        "3",        "--batch",    "8",           "--window",   "8",
        "--channels", "4",        "--hidden",    "8",          "--seed",
        "11"};
    auto train_to = [&](const fs::path& model, const fs::path& curve) {
      std::vector<std::string> args = train;
      args.insert(args.end(), {"--out", model.string(), "--curve",
                               curve.string()});
      return args;
    };
    train1 = run_cli(train_to(model1, curve1));
    train2 = run_cli(train_to(model2, curve2));
  }
};

void write_image_family(const fs::path& dir, int count, std::uint64_t seed,
                        double noise_sigma) {
  fs::create_directories(dir);
  const ptsp::GrayImage base = oracle::textured_image(32, 32, 777, 4.0);
  for (int i = 0; i < count; ++i) {
    ptsp::Rng rng(ptsp::Rng::mix(seed, std::uint64_t(i)));
    const int shift = rng.uniform_int(-2, 2);
    ptsp::GrayImage img = base;
    for (auto& v : img.data) {
      double x = double(v) + shift + rng.normal(0.0, noise_sigma);
      v = std::uint8_t(std::clamp(std::lround(x), 0l, 255l));
    }
    char name[32];
    std::snprintf(name, sizeof name, "img_%02d.pgm", i);
    ptsp::save_pgm(img, (dir / name).string());
  }
}

}  // namespace

TEST_CASE("help and usage errors") {
  CliResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("Usage") != std::string::npos);
  CHECK(help.out.find("purify") != std::string::npos);
  CHECK(help.out.find("synth") != std::string::npos);

  CliResult sub_help = run_cli({"purify", "--help"});
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--threshold") != std::string::npos);

  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"purify", "--no-such-flag"}).code == 1);
}

TEST_CASE("domain errors exit with 1") {
  fs::path nowhere = fs::temp_directory_path() / "ptsp_cli_missing_dir";
  fs::remove_all(nowhere);
  CHECK(run_cli({"purify", "--ldct", nowhere.string(), "--ndct",
                 nowhere.string(), "--ncct", nowhere.string(), "--out",
                 (nowhere / "m.jsonl").string()})
            .code == 1);
  CHECK(run_cli({"gradcheck", "--m", "0"}).code == 1);
  CHECK(run_cli({"traintoy", "--synthetic", "4", "--manifest", "x.jsonl"})
            .code == 1);
  CHECK(run_cli({"traintoy"}).code == 1);
}

TEST_CASE("synth writes degraded images and a shift table") {
  const Pipeline& p = Pipeline::get();
  REQUIRE(p.synth.code == 0);
  CHECK(p.synth.out.find("synthesized 3 images") != std::string::npos);
  for (const char* id : {"a", "b", "c"}) {
    fs::path img = p.ldct / (std::string(id) + ".pgm");
    REQUIRE(fs::exists(img));
    ptsp::GrayImage degraded = ptsp::load_pgm(img.string());
    CHECK(degraded.width == 96);
    CHECK(degraded.height == 96);
  }
  std::vector<std::string> rows =
      lines_of(read_file(p.ldct / "shifts.csv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "image,dy,dx");
  for (int i = 1; i <= 3; ++i) {
    std::size_t c1 = rows[std::size_t(i)].find(',');
    std::size_t c2 = rows[std::size_t(i)].find(',', c1 + 1);
    REQUIRE(c2 != std::string::npos);
    int dy = std::stoi(rows[std::size_t(i)].substr(c1 + 1, c2 - c1 - 1));
    int dx = std::stoi(rows[std::size_t(i)].substr(c2 + 1));
    bool horizontal = dy == 0;
    int mag = std::abs(horizontal ? dx : dy);
    CHECK((dy == 0) != (dx == 0));
    CHECK(mag >= 2);
    CHECK(mag <= 5);
  }
}

TEST_CASE("purify emits the accept table and a sorted manifest") {
  const Pipeline& p = Pipeline::get();
  REQUIRE(p.purify.code == 0);
  std::vector<std::string> rows = lines_of(p.purify.out);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "image,enumerated,accepted,accept_rate");
  CHECK(rows[1] == "a,25,25,1.0000");
  CHECK(rows[2] == "b,25,25,1.0000");
  CHECK(rows[3] == "c,25,25,1.0000");
  CHECK(rows[4] == "TOTAL,75,75,1.0000");

  ptsp::DatasetManifest manifest = ptsp::read_manifest(p.man.string());
  CHECK(manifest.scheme == "0,64,128,256|1,0.7,0");
  REQUIRE(manifest.records.size() == 75);
  for (const ptsp::ManifestRecord& r : manifest.records) {
    CHECK(r.mode == "rmse");
    CHECK(r.p == 32);
    CHECK(r.top % 16 == 0);
    CHECK(r.left % 16 == 0);
  }
}

TEST_CASE("purify runs are byte-identical, also across worker counts") {
  const Pipeline& p = Pipeline::get();
  REQUIRE(p.purify_again.code == 0);
  REQUIRE(p.purify_w2.code == 0);
  const std::string first = read_file(p.man);
  CHECK(first == read_file(p.man_again));
  CHECK(first == read_file(p.man_w2));
  CHECK(p.purify.out == p.purify_again.out);
}

TEST_CASE("extract writes one PGM triple per record") {
  const Pipeline& p = Pipeline::get();
  REQUIRE(p.extract.code == 0);
  CHECK(p.extract.out.find("exported 75 patch triplets") != std::string::npos);
  std::size_t pgms = 0;
  for (const auto& entry : fs::directory_iterator(p.extract_dir))
    if (entry.path().extension() == ".pgm") ++pgms;
  CHECK(pgms == 225);
  CHECK(fs::exists(p.extract_dir / "a_0_0_L.pgm"));
  CHECK(fs::exists(p.extract_dir / "a_0_0_N.pgm"));
  CHECK(fs::exists(p.extract_dir / "a_0_0_G.pgm"));
}

TEST_CASE("stats summarizes the manifest") {
  const Pipeline& p = Pipeline::get();
  fs::path csv = p.root / "stats.csv";
  CliResult r = run_cli({"stats", "--manifest", p.man.string(), "--csv",
                         csv.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("records 75\n") != std::string::npos);
  CHECK(r.out.find("mode rmse 75\n") != std::string::npos);
  std::vector<std::string> rows = lines_of(read_file(csv));
  REQUIRE(rows.size() >= 3);
  CHECK(rows[0] == "section,key,value");
  CHECK(rows[1] == "count,records,75");
  CHECK(rows[2] == "mode,rmse,75");
}

TEST_CASE("traintoy trains from the manifest deterministically") {
  const Pipeline& p = Pipeline::get();
  REQUIRE(p.train1.code == 0);
  REQUIRE(p.train2.code == 0);
  CHECK(p.train1.out.find("trained 3 steps") != std::string::npos);
  std::vector<std::string> rows = lines_of(read_file(p.curve1));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "step,lr,loss");
  CHECK(read_file(p.curve1) == read_file(p.curve2));
  CHECK(read_file(p.model1) == read_file(p.model2));
  ptsp::ToyDenoiser model = ptsp::load_model(p.model1.string());
  CHECK(model.patch == 32);
  CHECK(model.window == 8);
}

TEST_CASE("traintoy synthetic mode needs no images") {
  fs::path dir = fresh_dir("cli_synth_train");
  CliResult r = run_cli({"traintoy", "--synthetic", "12", "--patch", "16",
                         "--steps", "2", "--batch", "4", "--window", "4",
                         "--channels", "4", "--hidden", "6", "--seed", "9",
                         "--out", (dir / "m.bin").string(), "--curve",
                         (dir / "c.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(lines_of(read_file(dir / "c.csv")).size() == 3);
}

TEST_CASE("gradcheck subcommand passes at defaults") {
  CliResult r = run_cli({"gradcheck", "--m", "2", "--c", "3", "--d", "4",
                         "--seed", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("max_rel_err=", 0) == 0);
  CHECK(r.out.find("PASS\n") != std::string::npos);
}

TEST_CASE("metrics subcommand reports both distances") {
  fs::path dir_a = fresh_dir("cli_metrics_a");
  fs::path dir_b = fresh_dir("cli_metrics_b");
  write_image_family(dir_a, 6, 1, 2.0);
  write_image_family(dir_b, 6, 2, 10.0);
  fs::path csv = fs::temp_directory_path() / "ptsp_cli_metrics.csv";

  CliResult self = run_cli({"metrics", "--a", dir_a.string(), "--b",
                            dir_a.string(), "--out", csv.string()});
  REQUIRE(self.code == 0);
  std::vector<std::string> rows = lines_of(self.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "metric,value,n_a,n_b,extractor");
  CHECK(rows[1].rfind("frechet,", 0) == 0);
  CHECK(rows[2].rfind("mmd2,", 0) == 0);
  CHECK(rows[1].find(",6,6,pool8") != std::string::npos);
  CHECK(read_file(csv) == self.out);
  double self_frechet = std::stod(lines_of(self.out)[1].substr(8));
  CHECK(std::abs(self_frechet) <= 1e-8);

  CliResult crossed = run_cli({"metrics", "--a", dir_a.string(), "--b",
                               dir_b.string()});
  REQUIRE(crossed.code == 0);
  double crossed_frechet = std::stod(lines_of(crossed.out)[1].substr(8));
  CHECK(crossed_frechet > self_frechet);

  CHECK(run_cli({"metrics", "--a", dir_a.string(), "--b", dir_b.string(),
                 "--extractor", "vgg"})
            .code == 1);
}

TEST_CASE("config file fills options, flags override, extras fail") {
  fs::path dir = fresh_dir("cli_config");
  fs::path cfg = dir / "run.ini";
  write_file(cfg, "[traintoy]\nsteps=2\nbatch=4\n");
  std::vector<std::string> base = {
      "--config", cfg.string(), "traintoy", "--synthetic", "8",
      "--patch",  "16",         "--window", "4",           "--channels",
      "4",        "--hidden",   "6",        "--seed",      "3"};
  auto with_io = [&](const std::string& tag,
                     std::vector<std::string> extra = {}) {
    std::vector<std::string> args = base;
    args.insert(args.end(), {"--out", (dir / (tag + ".bin")).string(),
                             "--curve", (dir / (tag + ".csv")).string()});
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
  };

  CliResult from_cfg = run_cli(with_io("cfg"));
  REQUIRE(from_cfg.code == 0);
  CHECK(lines_of(read_file(dir / "cfg.csv")).size() == 3);  // header + 2

  CliResult overridden = run_cli(with_io("over", {"--steps", "1"}));
  REQUIRE(overridden.code == 0);
  CHECK(lines_of(read_file(dir / "over.csv")).size() == 2);

  fs::path bad = dir / "bad.ini";
  write_file(bad, "[traintoy]\nbogus=1\n");
  std::vector<std::string> broken = with_io("bad");
  broken[1] = bad.string();
  CHECK(run_cli(broken).code == 1);
}
