// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "moediff_test_cli";

int run(const std::string& args) {
  const std::string cmd =
      std::string(MOEDIFF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = kWork / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_tiny_config() {
  fs::create_directories(kWork);
  const fs::path cfg = kWork / "tiny.cfg";
  std::ofstream out(cfg);
  out << "blocks = 1\n"
         "d = 8\n"
         "d_y = 8\n"
         "n_y = 8\n"
         "space_experts = 2\n"
         "time_experts = 2\n"
         "T = 10\n"
         "t_c = 5\n"
         "d_t = 8\n"
         "expert_hidden_mult = 1\n"
         "gate_hidden = 8\n"
         "edge_layers = 2\n"
         "edge_channels = 2\n"
         "batch = 2\n"
         "warmup = 2\n";
  return cfg;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("--help") == 0);
  CHECK(run("gen-data") == 2);                       // --out is required
  CHECK(run("sample --out /tmp/x") == 2);            // --prompt is required
  CHECK(run("ablate --out /tmp/x --knob bogus") == 2);
  CHECK(run("verify --suite bogus") == 2);
}

TEST_CASE("gen-data writes a manifest first and is deterministic") {
  const fs::path cfg = write_tiny_config();
  const fs::path a = fresh_dir("gen_a");
  const fs::path b = fresh_dir("gen_b");

  CHECK(run("gen-data --config " + q(cfg) + " --out " + q(a) +
            " --seed 9 --count 6") == 0);
  CHECK(fs::exists(a / "manifest.json"));
  CHECK(fs::exists(a / "dataset.txt"));
  CHECK(line_count(a / "dataset.txt") == 6);

  CHECK(run("gen-data --config " + q(cfg) + " --out " + q(b) +
            " --seed 9 --count 6") == 0);
  CHECK(slurp(a / "dataset.txt") == slurp(b / "dataset.txt"));

  const fs::path c = fresh_dir("gen_c");
  CHECK(run("gen-data --config " + q(cfg) + " --out " + q(c) +
            " --seed 10 --count 6") == 0);
  CHECK(slurp(a / "dataset.txt") != slurp(c / "dataset.txt"));
}

TEST_CASE("config problems and io failures map to distinct codes") {
  const fs::path dir = fresh_dir("errs");
  const fs::path bad = kWork / "bad.cfg";
  std::ofstream(bad) << "blocks 4\n";  // missing '='
  CHECK(run("gen-data --config " + q(bad) + " --out " + q(dir) + " --count 2") == 2);

  const fs::path unknown = kWork / "unknown.cfg";
  std::ofstream(unknown) << "blks = 4\n";
  CHECK(run("gen-data --config " + q(unknown) + " --out " + q(dir) + " --count 2") == 2);

  CHECK(run("train --data " + q(kWork / "no_such.txt") + " --out " + q(dir) +
            " --steps 1") == 3);

  const fs::path blocker = kWork / "blocker";
  std::ofstream(blocker) << "plain file\n";
  CHECK(run("gen-data --out " + q(blocker / "sub") + " --count 2") == 3);
}

TEST_CASE("train writes metrics and checkpoints, and resumes") {
  const fs::path cfg = write_tiny_config();
  const fs::path data_dir = fresh_dir("train_data");
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(data_dir) +
              " --seed 3 --count 6") == 0);
  const std::string data = q(data_dir / "dataset.txt");

  const fs::path run1 = fresh_dir("train_run1");
  CHECK(run("train --config " + q(cfg) + " --data " + data + " --out " + q(run1) +
            " --seed 3 --steps 2 --ckpt-every 1") == 0);
  CHECK(fs::exists(run1 / "manifest.json"));
  CHECK(fs::exists(run1 / "model.ckpt"));
  CHECK(fs::exists(run1 / "state.ckpt"));
  REQUIRE(fs::exists(run1 / "metrics.csv"));
  CHECK(line_count(run1 / "metrics.csv") == 3);
  {
    std::ifstream in(run1 / "metrics.csv");
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "step,L,L_denoise,L_edge,lr");
    std::getline(in, row);
    CHECK(row.rfind("1,", 0) == 0);
  }

  const fs::path run2 = fresh_dir("train_run2");
  CHECK(run("train --config " + q(cfg) + " --data " + data + " --out " + q(run2) +
            " --seed 3 --steps 1 --resume " + q(run1 / "state.ckpt")) == 0);
  std::ifstream in(run2 / "metrics.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(row.rfind("3,", 0) == 0);  // optimizer step continues past the 2 run-1 steps
}

TEST_CASE("flag overrides beat config values") {
  const fs::path cfg = write_tiny_config();
  const fs::path data_dir = fresh_dir("ovr_data");
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(data_dir) +
              " --seed 5 --count 4") == 0);

  // warmup=2 in the config; --warmup 1 makes step-1 lr the full 1e-3.
  const fs::path out = fresh_dir("ovr_run");
  CHECK(run("train --config " + q(cfg) + " --data " + q(data_dir / "dataset.txt") +
            " --out " + q(out) + " --steps 1 --warmup 1 --lr 0.25") == 0);
  std::ifstream in(out / "metrics.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  const auto last_comma = row.find_last_of(',');
  CHECK(row.substr(last_comma + 1) == "0.25");
}

TEST_CASE("sample writes a deterministic image") {
  const fs::path cfg = write_tiny_config();
  const fs::path a = fresh_dir("sample_a");
  const fs::path b = fresh_dir("sample_b");
  const std::string common = "sample --config " + q(cfg) +
                             " --prompt \"red circle\" --height 8 --width 8 "
                             "--ddim --ddim-steps 2 --seed 11 --out ";

  CHECK(run(common + q(a)) == 0);
  REQUIRE(fs::exists(a / "sample.ppm"));
  const std::string img = slurp(a / "sample.ppm");
  CHECK(img.rfind("P6", 0) == 0);

  CHECK(run(common + q(b)) == 0);
  CHECK(slurp(b / "sample.ppm") == img);

  const fs::path c = fresh_dir("sample_c");
  CHECK(run("sample --config " + q(cfg) + " --prompt \"plaid gizmo\" --out " + q(c)) ==
        2);
}

TEST_CASE("trace records one row per sampling step and block") {
  const fs::path cfg = write_tiny_config();
  const fs::path out = fresh_dir("trace_run");
  CHECK(run("trace --config " + q(cfg) +
            " --prompt \"blue square\" --concept blue --height 8 --width 8 "
            "--ddim --ddim-steps 2 --seed 12 --out " +
            q(out)) == 0);
  REQUIRE(fs::exists(out / "trace.csv"));
  // 2 DDIM steps x 1 block, plus the header.
  CHECK(line_count(out / "trace.csv") == 3);

  const fs::path missing = fresh_dir("trace_missing");
  CHECK(run("trace --config " + q(cfg) +
            " --prompt \"blue square\" --concept red --out " + q(missing)) == 2);
}

TEST_CASE("ablate sweeps a knob into a csv table") {
  const fs::path cfg = write_tiny_config();
  const fs::path out = fresh_dir("ablate_run");
  CHECK(run("ablate --config " + q(cfg) +
            " --knob alpha --values 0.1 0.2 --count 4 --steps 2 --seed 6 --out " +
            q(out)) == 0);
  REQUIRE(fs::exists(out / "ablate.csv"));
  REQUIRE(line_count(out / "ablate.csv") == 3);
  std::ifstream in(out / "ablate.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "value,L_denoise_final,alignment,seconds_per_step");

  const fs::path bad = fresh_dir("ablate_bad");
  CHECK(run("ablate --config " + q(cfg) + " --knob alpha --out " + q(bad)) == 2);
}

TEST_CASE("verify runs the statistical suite") {
  const fs::path out = fresh_dir("verify_run");
  CHECK(run("verify --suite stats --out " + q(out)) == 0);
  CHECK(fs::exists(out / "manifest.json"));
}
