#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bfdn/cli.hpp"
#include "bfdn/config.hpp"
#include "bfdn/csv.hpp"
#include "bfdn/dataset.hpp"
#include "bfdn/pgm.hpp"

using namespace bfdn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("bfdn_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  std::vector<std::string> full{"bfdn"};
  full.insert(full.end(), args.begin(), args.end());
  const int code = run_cli(full, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST_CASE("pgm round trip and fixtures") {
  PgmImage img{3, 2, 255, {0, 1, 2, 253, 254, 255}};
  CHECK(decode_pgm(encode_pgm(img)) == img);
  PgmImage wide{2, 2, 65535, {0, 256, 65535, 1}};
  CHECK(decode_pgm(encode_pgm(wide)) == wide);
  // header with comments and mixed whitespace, built by hand
  std::string fixture = "P5\n# created by hand\n2 # width\n\t2\n# maxval next\n200\n";
  fixture += std::string("\x01\x02\x03\xc8", 4);
  const auto f = decode_pgm(bytes_of(fixture));
  CHECK(f.width == 2);
  CHECK(f.height == 2);
  CHECK(f.maxval == 200);
  CHECK(f.pixels == std::vector<std::uint16_t>{1, 2, 3, 200});
  CHECK_THROWS_WITH_AS(decode_pgm(bytes_of("P2\n2 2\n255\n1 2 3 4\n")), doctest::Contains("P2"), PgmError);
  CHECK_THROWS_AS(decode_pgm(bytes_of("XX")), PgmError);
  CHECK_THROWS_AS(decode_pgm(bytes_of("P5\n2 2\n0\n\x01\x02\x03\x04")), PgmError);
  CHECK_THROWS_AS(decode_pgm(bytes_of("P5\n2 2\n70000\n")), PgmError);
  CHECK_THROWS_WITH_AS(decode_pgm(bytes_of("P5\n2 2\n255\n\x01\x02")), doctest::Contains("truncated"), PgmError);
  const auto im = to_image(PgmImage{1, 1, 1, {1}});
  CHECK(im[0] == 255.0f);
  Image x = image_tensor<float>(1, 3);
  x[0] = -4;
  x[1] = 100.4f;
  x[2] = 300;
  CHECK(from_image(x).pixels == std::vector<std::uint16_t>{0, 100, 255});
  TempDir d("pgm");
  save_pgm(img, d.path / "a.pgm");
  CHECK(load_pgm(d.path / "a.pgm") == img);
}

TEST_CASE("synthetic dataset") {
  TempDir a("synth_a"), b("synth_b");
  const auto m1 = synth_dataset(6, 64, 5, a.path);
  const auto m2 = synth_dataset(6, 64, 5, b.path);
  REQUIRE(m1.entries.size() == 6);
  CHECK(m1.entries == m2.entries);
  CHECK(slurp(a.path / kManifestName) == slurp(b.path / kManifestName));
  const auto loaded = load_manifest(a.path);
  CHECK(loaded.entries == m1.entries);
  TempDir e("synth_empty");
  CHECK(synth_dataset(0, 64, 1, e.path).entries.empty());
  CHECK_THROWS_AS(synth_dataset(1, 16, 1, e.path), std::invalid_argument);

  // plateau count: local maxima of a 32-bin histogram holding >= 1% of pixels
  double plateaus = 0;
  const int n = 20;
  Rng rng(7);
  for (int k = 0; k < n; ++k) {
    const auto img = synth_image(128, rng);
    std::vector<int> hist(32);
    for (float v : img.data()) hist[std::min(31, int(v / 8))]++;
    const int floor = int(img.size() / 100);
    for (int i = 0; i < 32; ++i) {
      const int left = i ? hist[i - 1] : -1, right = i < 31 ? hist[i + 1] : -1;
      if (hist[i] >= floor && hist[i] >= left && hist[i] > right) plateaus += 1;
    }
  }
  CHECK(plateaus / n >= 5);
}

TEST_CASE("splits are disjoint and seeded") {
  const auto s = assign_splits(30, 0.1, 0.2, 4);
  CHECK(std::count(s.begin(), s.end(), "test") == 6);
  CHECK(std::count(s.begin(), s.end(), "validation") == 3);
  CHECK(std::count(s.begin(), s.end(), "train") == 21);
  CHECK(assign_splits(30, 0.1, 0.2, 4) == s);
}

TEST_CASE("experiment config") {
  ExperimentConfig c;
  const auto j = to_json(c);
  CHECK(j.at("schema") == kConfigSchema);
  CHECK(experiment_config_from_json(j) == c);
  // defaults are materialized
  const auto partial = experiment_config_from_json({{"schema", kConfigSchema}, {"seed", 3}});
  CHECK(partial.seed == 3);
  CHECK(to_json(partial).at("train").contains("lr_initial"));
  CHECK_THROWS_WITH_AS(experiment_config_from_json({{"schema", kConfigSchema}, {"train", {{"lr", 1}}}}),
                       doctest::Contains("train.lr"), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"schema", "other"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"schema", kConfigSchema}, {"model", {{"arch", "resnet"}}}}),
                  ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"schema", kConfigSchema}, {"noise", {{"sigma_min", -1}}}}),
                  ConfigError);
  ExperimentConfig d = c;
  d.train.lr_initial = 2e-3;
  CHECK(d.checksum() != c.checksum());
}

TEST_CASE("csv formatting") {
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_number(0.1) == "0.1");
  SweepTable t{{"sigma", "x"}, {}};
  t.add_row({1, 2.5});
  std::ostringstream os;
  t.write_csv(os, {3, "abc"});
  CHECK(os.str() == "# seed=3 config_checksum=abc version=" + std::string(kVersion) + "\nsigma,x\n1,2.5\n");
  CHECK_THROWS(t.add_row({1}));
}

TEST_CASE("command line") {
  TempDir d("cli");
  const auto p = d.path;
  std::string out, err;
  CHECK(cli({"bogus"}, &out, &err) == 2);
  CHECK(cli({"synth", "--count", "1", "--nope"}, &out, &err) == 2);
  CHECK(cli({"synth", "--count", "5", "--size", "48", "--out", (p / "data").string(), "--seed", "2"}) == 0);
  CHECK(fs::exists(p / "data" / kManifestName));

  ExperimentConfig cfg;
  cfg.model.bias_enabled = false;
  cfg.model.depth = 4;
  cfg.model.channels = 8;
  cfg.train.epochs = 1;
  cfg.train.patch_size = 16;
  cfg.train.patch_stride = 16;
  cfg.train.augment.downsampling = false;
  save_config(p / "bf.json", cfg);
  CHECK(cli({"init", "--config", (p / "bf.json").string(), "--out", (p / "fresh.ckpt").string()}) == 0);
  CHECK(cli({"check", "homogeneity", "--ckpt", (p / "fresh.ckpt").string(), "--alphas", "0,0.25,2,7.5"}, &out) == 0);
  CHECK(out.find("PASS") != std::string::npos);

  ExperimentConfig biased = cfg;
  biased.model.bias_enabled = true;
  save_config(p / "b.json", biased);
  CHECK(cli({"train", "--config", (p / "b.json").string(), "--data", (p / "data").string(), "--out",
             (p / "b.ckpt").string(), "--deterministic"}) == 0);
  CHECK(fs::exists(p / "b.ckpt.log.csv"));
  // a trained biased model is not homogeneous
  CHECK(cli({"check", "homogeneity", "--ckpt", (p / "b.ckpt").string()}, &out) == 2);

  CHECK(cli({"eval-sweep", "--ckpt", (p / "b.ckpt").string(), "--data", (p / "data").string(), "--sigmas", "25",
             "--out", (p / "one.csv").string()}) == 0);
  const std::string csv = slurp(p / "one.csv");
  std::istringstream lines(csv);
  std::string l1, l2, l3, l4;
  std::getline(lines, l1);
  std::getline(lines, l2);
  std::getline(lines, l3);
  CHECK(l1.rfind("# seed=", 0) == 0);
  CHECK(l2 == "sigma,input_psnr,output_psnr,output_ssim,noise_seed");
  CHECK(!l3.empty());
  CHECK(!std::getline(lines, l4));
  CHECK(cli({"eval-sweep", "--ckpt", (p / "b.ckpt").string(), "--data", (p / "data").string(), "--sigmas", "25",
             "--out", (p / "two.csv").string()}) == 0);
  CHECK(slurp(p / "two.csv") == csv);
  CHECK(cli({"eval-sweep", "--ckpt", (p / "b.ckpt").string(), "--data", (p / "data").string(), "--sigmas", "30,10",
             "--out", (p / "bad.csv").string()}) == 2);

  CHECK(cli({"analyze", "bias", "--ckpt", (p / "b.ckpt").string(), "--data", (p / "data").string(), "--sigmas",
             "10,50", "--patch", "16", "--out", (p / "bias.csv").string()}) == 0);
  const auto img = (p / "data" / "synth_0000.pgm").string();
  CHECK(cli({"denoise", "--ckpt", (p / "b.ckpt").string(), "--in", img, "--sigma", "20", "--out",
             (p / "dn.pgm").string()}) == 0);
  CHECK(load_pgm(p / "dn.pgm").width == 48);
  CHECK(cli({"analyze", "jacobian", "--ckpt", (p / "fresh.ckpt").string(), "--in", img, "--sigma", "10", "--pixels",
             "1,2;5,5", "--patch", "12", "--out-dir", (p / "jac").string()}) == 0);
  CHECK(fs::exists(p / "jac" / "filter_5_5.pgm"));
  CHECK(fs::exists(p / "jac" / "filter_5_5.pgm.txt"));
  CHECK(cli({"analyze", "jacobian", "--ckpt", (p / "fresh.ckpt").string(), "--in", img, "--sigma", "10", "--pixels",
             "40,2", "--patch", "12", "--out-dir", (p / "jac").string()}) == 2);
  CHECK(cli({"analyze", "svd", "--ckpt", (p / "fresh.ckpt").string(), "--in", img, "--sigmas", "10,25,50", "--patch",
             "10", "--out-dir", (p / "svd").string()}) == 0);
  CHECK(fs::exists(p / "svd" / "summary.csv"));
  CHECK(fs::exists(p / "svd" / "nested.csv"));
  CHECK(cli({"denoise", "--ckpt", (p / "missing.ckpt").string(), "--in", img, "--sigma", "20", "--out",
             (p / "x.pgm").string()}) == 1);
}
