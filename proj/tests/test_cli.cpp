#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// End-to-end checks of the command-line surface: exit codes, artifact files,
// and byte-level reproducibility. Each case shells out to the built binary.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kBin = UDA_LAB_BIN;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("uda_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const int status = std::system((kBin + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_config(const fs::path& p, const std::string& extra = "") {
  std::ofstream out(p);
  out << R"({
  "dataset": {"kind": "two_moons", "n_per_domain": 100},
  "preset": "cliv+tc",
  "epochs": 10,
  "seeds": {"model": 1, "data": 2, "augment": 3},
  "output_dir": ")" << (p.parent_path() / "runs").string() << R"(")" << extra << "\n}\n";
}

}  // namespace

TEST_CASE("train writes artifacts and honors exit codes") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_config(cfg);

  SUBCASE("missing config exits 2") {
    CHECK(run("train --config " + (tmp.path / "nope.json").string()) == 2);
  }
  SUBCASE("invalid json exits 2") {
    std::ofstream(tmp.path / "bad.json") << "{ not json";
    CHECK(run("train --config " + (tmp.path / "bad.json").string()) == 2);
  }
  SUBCASE("unknown config key exits 2") {
    std::ofstream(tmp.path / "weird.json") << R"({"epoch_count": 3})";
    CHECK(run("train --config " + (tmp.path / "weird.json").string()) == 2);
  }
  SUBCASE("valid run writes metrics, checkpoint, and config echo") {
    const fs::path out = tmp.path / "run";
    REQUIRE(run("train --config " + cfg.string() + " --out " + out.string()) == 0);
    CHECK(fs::exists(out / "metrics.csv"));
    CHECK(fs::exists(out / "checkpoint.json"));
    CHECK(fs::exists(out / "config.json"));
    const std::string metrics = slurp(out / "metrics.csv");
    CHECK(metrics.rfind("epoch,ce,vat,aug,tc,adv,total,source_acc,target_acc,lr,grl_lambda\n", 0) ==
          0);
    // 10 epochs -> 11 lines with the header.
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 11);
  }
  SUBCASE("--set overrides are echoed back") {
    const fs::path out = tmp.path / "run_set";
    REQUIRE(run("train --config " + cfg.string() + " --set seeds.model=7 --out " + out.string()) ==
            0);
    const std::string echo = slurp(out / "config.json");
    CHECK(echo.find("\"model\": 7") != std::string::npos);
  }
  SUBCASE("nonfinite loss exits 3") {
    const fs::path bad = tmp.path / "blowup.json";
    write_config(bad, ",\n  \"opt\": {\"lr0\": 1e18}");
    CHECK(run("train --config " + bad.string() + " --out " + (tmp.path / "x").string()) == 3);
  }
  SUBCASE("training twice yields byte-identical metrics") {
    const fs::path a = tmp.path / "runA", b = tmp.path / "runB";
    REQUIRE(run("train --config " + cfg.string() + " --out " + a.string()) == 0);
    REQUIRE(run("train --config " + cfg.string() + " --out " + b.string()) == 0);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "checkpoint.json") == slurp(b / "checkpoint.json"));
  }
}

TEST_CASE("analyze produces the diagnostic artifacts") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_config(cfg);
  const fs::path run_dir = tmp.path / "run";
  REQUIRE(run("train --config " + cfg.string() + " --out " + run_dir.string()) == 0);
  const std::string ckpt = (run_dir / "checkpoint.json").string();

  SUBCASE("jacobian only") {
    const fs::path out = tmp.path / "diag_j";
    REQUIRE(run("analyze --checkpoint " + ckpt + " --config " + cfg.string() +
                " --which jacobian --out " + out.string()) == 0);
    const std::string csv = slurp(out / "sensitivity.csv");
    CHECK(csv.rfind("domain,sample,jacobian_norm\n", 0) == 0);
    CHECK(csv.find("source,mean,") != std::string::npos);
    CHECK(csv.find("target,mean,") != std::string::npos);
  }
  SUBCASE("fourier on points2d exits 4") {
    CHECK(run("analyze --checkpoint " + ckpt + " --config " + cfg.string() +
              " --which fourier --out " + (tmp.path / "diag_f").string()) == 4);
  }
  SUBCASE("all on a glyph checkpoint writes five artifact files") {
    const fs::path gcfg = tmp.path / "glyph.json";
    std::ofstream(gcfg) << R"({
      "dataset": {"kind": "glyph_images", "n_per_domain": 80, "image_size": 8},
      "preset": "source_only",
      "epochs": 5,
      "output_dir": ")" << (tmp.path / "runs").string() << R"("
    })";
    const fs::path grun = tmp.path / "grun";
    REQUIRE(run("train --config " + gcfg.string() + " --out " + grun.string()) == 0);
    const fs::path gout = tmp.path / "diag_all";
    REQUIRE(run("analyze --checkpoint " + (grun / "checkpoint.json").string() + " --config " +
                gcfg.string() + " --which all --out " + gout.string()) == 0);
    CHECK(fs::exists(gout / "sensitivity.csv"));
    CHECK(fs::exists(gout / "trajectory.csv"));
    CHECK(fs::exists(gout / "fourier.csv"));
    CHECK(fs::exists(gout / "adaptability.json"));
    CHECK(fs::exists(gout / "embeddings.csv"));
  }
}

TEST_CASE("sweep writes one summary row per preset with a shared dataset hash") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_config(cfg);
  const fs::path out = tmp.path / "sweep";
  REQUIRE(run("sweep --config " + cfg.string() + " --presets source_only,dann,cliv+tc --out " +
              out.string()) == 0);
  const std::string summary = slurp(out / "summary.csv");
  CHECK(summary.rfind("preset,source_acc,target_acc,d_a,lambda,jac_source,jac_target,dataset_hash\n",
                      0) == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 4);

  // All rows share the dataset hash (same data seed).
  std::stringstream ss(summary);
  std::string line, hash;
  std::getline(ss, line);  // header
  while (std::getline(ss, line)) {
    const std::string h = line.substr(line.rfind(',') + 1);
    if (hash.empty()) hash = h;
    CHECK(h == hash);
  }
  CHECK(fs::exists(out / "cliv+tc" / "checkpoint.json"));
}

TEST_CASE("sweep at full scale orders cliv+tc at or above dann on rotated moons") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "full.json";
  std::ofstream(cfg) << R"({
    "dataset": {"kind": "two_moons", "n_per_domain": 300},
    "epochs": 100,
    "output_dir": ")" << (tmp.path / "runs").string() << R"("
  })";
  const fs::path out = tmp.path / "sweep_full";
  REQUIRE(run("sweep --config " + cfg.string() + " --presets dann,cliv+tc --out " + out.string()) ==
          0);
  std::stringstream ss(slurp(out / "summary.csv"));
  std::string line;
  std::getline(ss, line);  // header
  double dann_acc = -1.0, cliv_acc = -1.0;
  while (std::getline(ss, line)) {
    std::stringstream row(line);
    std::string preset, src, tgt;
    std::getline(row, preset, ',');
    std::getline(row, src, ',');
    std::getline(row, tgt, ',');
    if (preset == "dann") dann_acc = std::stod(tgt);
    if (preset == "cliv+tc") cliv_acc = std::stod(tgt);
  }
  REQUIRE(dann_acc >= 0.0);
  REQUIRE(cliv_acc >= 0.0);
  CHECK(cliv_acc >= dann_acc);
}

TEST_CASE("gen-data emits an importable csv") {
  TempDir tmp;
  const fs::path out = tmp.path / "pair.csv";
  REQUIRE(run("gen-data --dataset shifted_blobs --classes 3 --n 30 --shift 1.0,0.5 --seed 11 --out " +
              out.string()) == 0);
  const std::string csv = slurp(out);
  CHECK(csv.rfind("x_0,x_1,y,domain\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 61);  // header + 30 + 30
}

TEST_CASE("grad-check exits zero on a fresh build") {
  CHECK(run("grad-check") == 0);
}
