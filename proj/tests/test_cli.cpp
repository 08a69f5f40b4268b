#include "test_support.hpp"

#include "cli.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace st3d;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> small_synth(const fs::path& dir) {
  return {"synth", "--seed", "7", "--samples", "2", "--layers", "2", "--spots", "20", "--genes", "5",
          "--feature-dim", "4", "-o", dir.string()};
}

}  // namespace

TEST_CASE("help exits 0 without writing") {
  testing::TempDir dir("cli");
  const fs::path out = dir.path() / "never";
  CHECK(run({"--help"}).code == cli::kExitOk);
  for (const char* sub : {"synth", "validate", "build-graph", "impute", "train", "predict", "evaluate", "heatmap"}) {
    const auto r = run({sub, "--help", "-o", out.string()});
    CHECK_MESSAGE(r.code == cli::kExitOk, sub);
    CHECK(r.out.find("Usage") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("usage and data errors map to exit codes") {
  testing::TempDir dir("cli");
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"synth", "--no-such-flag", "-o", dir.path().string()}).code == cli::kExitUsage);
  CHECK(run({"synth", "--rho", "2", "-o", dir.path().string()}).code == cli::kExitUsage);

  const std::string missing = (dir.path() / "missing" / "manifest.json").string();
  const auto r = run({"build-graph", missing, "-o", (dir.path() / "g").string()});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find(missing) != std::string::npos);
}

TEST_CASE("config files are strict and flags override them") {
  testing::TempDir dir("cli");
  const fs::path cfg = dir.path() / "synth.ini";
  std::ofstream(cfg) << "# synthetic batch\nsamples = 1\nlayers = 2\nspots = 9\ngenes = 4\nfeature-dim = 3\n";
  const fs::path data = dir.path() / "data";
  REQUIRE(run({"synth", "--config", cfg.string(), "--genes", "6", "-o", data.string()}).code == cli::kExitOk);
  const std::string header = slurp(data / "sample00.expression.tsv").substr(0, 40);
  CHECK(header.find("G005") != std::string::npos);
  CHECK(fs::exists(data / "manifest.json"));

  std::ofstream(cfg, std::ios::app) << "spots-per-layr = 9\n";
  const auto bad = run({"synth", "--config", cfg.string(), "-o", (dir.path() / "x").string()});
  CHECK(bad.code == cli::kExitUsage);
  CHECK(bad.err.find("spots-per-layr") != std::string::npos);
}

TEST_CASE("synth output validates") {
  testing::TempDir dir("cli");
  REQUIRE(run(small_synth(dir.path())).code == cli::kExitOk);
  CHECK(run({"validate", (dir.path() / "manifest.json").string()}).code == cli::kExitOk);

  // Break a spots table: duplicate the first data row.
  const fs::path spots = dir.path() / "sample00.spots.tsv";
  std::string text = slurp(spots);
  const auto first = text.find('\n') + 1;
  const auto second = text.find('\n', first) + 1;
  text.insert(second, text.substr(first, second - first));
  std::ofstream(spots, std::ios::binary) << text;
  CHECK(run({"validate", (dir.path() / "manifest.json").string()}).code == cli::kExitData);
}

TEST_CASE("pipeline is reproducible") {
  testing::TempDir dir("cli");
  const fs::path d = dir.path();
  REQUIRE(run(small_synth(d / "data")).code == cli::kExitOk);
  const std::string manifest = (d / "data" / "manifest.json").string();
  REQUIRE(run({"build-graph", manifest, "-o", (d / "graphs").string()}).code == cli::kExitOk);
  CHECK(fs::exists(d / "graphs" / "sample00.graph.tsv"));

  const auto imp = run({"impute", manifest, "--graphs", (d / "graphs").string(), "--method", "overlap", "-o",
                        (d / "imp").string()});
  CHECK(imp.code == cli::kExitOk);
  CHECK(fs::exists(d / "imp" / "predictions" / "sample01.expression.tsv"));

  const std::vector<std::string> model{"--hidden-dim", "8", "--gat-layers", "1", "--steps", "5"};
  auto train_args = std::vector<std::string>{"train", manifest, "--seed", "3", "-o", (d / "model").string()};
  train_args.insert(train_args.end(), model.begin(), model.end());
  REQUIRE(run(train_args).code == cli::kExitOk);
  CHECK(fs::exists(d / "model" / "model.ckpt"));
  CHECK(fs::exists(d / "model" / "trace.csv"));

  const auto pred = run({"predict", manifest, "--model", (d / "model").string(), "-o", (d / "pred").string()});
  CHECK(pred.code == cli::kExitOk);
  CHECK(fs::exists(d / "pred" / "predictions" / "sample00.provenance.tsv"));

  for (const char* run_dir : {"eval1", "eval2"}) {
    auto args = std::vector<std::string>{"evaluate", manifest, "--seed", "3", "--folds", "2", "-o",
                                         (d / run_dir).string()};
    args.insert(args.end(), model.begin(), model.end());
    REQUIRE(run(args).code == cli::kExitOk);
  }
  CHECK(slurp(d / "eval1" / "report.json") == slurp(d / "eval2" / "report.json"));

  const auto svg = run({"heatmap", manifest, "--sample", "sample00", "--gene", "G001", "--predictions",
                        (d / "pred" / "predictions" / "sample00.expression.tsv").string(), "-o", (d / "svg").string()});
  CHECK(svg.code == cli::kExitOk);
  CHECK(fs::exists(d / "svg" / "sample00_G001.svg"));
  CHECK(run({"heatmap", manifest, "--sample", "nope", "--gene", "G001", "-o", (d / "svg").string()}).code ==
        cli::kExitData);
}
