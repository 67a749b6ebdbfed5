#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "subdistill/subspace.hpp"
#include "subdistill/textio.hpp"
#include "subdistill/trainer.hpp"

using namespace subdistill;
namespace fs = std::filesystem;

#ifndef SUBDISTILL_CLI_PATH
#define SUBDISTILL_CLI_PATH "tools/subdistill"
#endif

namespace {

const std::string kCli = SUBDISTILL_CLI_PATH;

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  auto dir = fs::temp_directory_path() / "subdistill_test_cli";
  fs::create_directories(dir);
  auto out_path = dir / "stdout.txt";
  auto err_path = dir / "stderr.txt";
  std::string cmd = kCli + " " + args + " >" + out_path.string() + " 2>" + err_path.string();
  int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = read_text_file(out_path);
  r.err = read_text_file(err_path);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal XML well-formedness scan: tags balance, attributes quoted.
bool xml_well_formed(const std::string& body) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] != '<') {
      ++i;
      continue;
    }
    std::size_t end = body.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = body.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag.rfind("!--", 0) == 0) continue;
    bool closing = tag[0] == '/';
    bool self_closing = tag.back() == '/';
    std::string name = tag.substr(closing ? 1 : 0);
    name = name.substr(0, name.find_first_of(" \t\n/"));
    // quotes must pair inside the tag
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

// One-time fixture: dataset, config, trained teacher.
struct CliFixture {
  fs::path root;
  fs::path config;

  CliFixture() {
    root = fs::temp_directory_path() / "subdistill_test_cli" / "fixture";
    fs::remove_all(root);
    fs::create_directories(root);
    REQUIRE(run_cli("gen-shapes --out " + (root / "data").string() +
                    " --per-class 25 --size 12 --seed 5").exit_code == 0);
    config = root / "cfg.json";
    nlohmann::json j;
    j["dataset"] = {{"format", "idx_pair"},
                    {"images", (root / "data" / "shapes-images.idx").string()},
                    {"labels", (root / "data" / "shapes-labels.idx").string()}};
    j["subtask"] = (root / "data" / "strokes.json").string();
    j["teacher"] = {{"checkpoint", (root / "teacher.sdck").string()},
                    {"widths", {144, 48, 40, 32, 24, 16, 10}},
                    {"epochs", 100},
                    {"learning_rate", 0.1},
                    {"seed", 3}};
    j["student"] = {{"widths", {144, 32, 24, 20, 16, 4}}};
    j["distill"] = {{"epochs", 4},      {"learning_rate", 0.03}, {"batch_size", 16},
                    {"seed", 1},        {"training_fraction", 1.0}};
    j["out_dir"] = (root / "out").string();
    write_text_file(config, j.dump(2));
    REQUIRE(run_cli("train-teacher --config " + config.string()).exit_code == 0);
  }

  static CliFixture& instance() {
    static CliFixture f;
    return f;
  }
};

}  // namespace

TEST_CASE("train-teacher is idempotent and checkpoints exist") {
  auto& f = CliFixture::instance();
  CHECK(fs::exists(f.root / "teacher.sdck"));
  std::string first = slurp(f.root / "teacher.sdck");
  CHECK(run_cli("train-teacher --config " + f.config.string()).exit_code == 0);
  CHECK(slurp(f.root / "teacher.sdck") == first);
}

TEST_CASE("missing dataset path exits 2 with machine-readable error") {
  auto& f = CliFixture::instance();
  auto bad = f.root / "bad.json";
  nlohmann::json j = nlohmann::json::parse(read_text_file(f.config));
  j["dataset"]["images"] = (f.root / "nope.idx").string();
  write_text_file(bad, j.dump());
  CliResult r = run_cli("train-teacher --config " + bad.string());
  CHECK(r.exit_code == 2);
  auto err = nlohmann::json::parse(r.err);
  CHECK(err.at("code").get<int>() == 2);
  CHECK(err.at("error").get<std::string>().find("nope.idx") != std::string::npos);
}

TEST_CASE("extract-subspaces writes tagged frames") {
  auto& f = CliFixture::instance();
  CliResult r = run_cli("extract-subspaces --config " + f.config.string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("beta") != std::string::npos);
  for (int l : {1, 2, 3, 4})
    CHECK(fs::exists(f.root / "out" / ("subspace_l" + std::to_string(l) + ".sdsu")));
  Subspace s = load_subspace(f.root / "out" / "subspace_l1.sdsu");
  CHECK(s.method == SubspaceMethod::prca);
  CHECK(s.orthonormality_defect() <= 1e-8);

  CHECK(run_cli("extract-subspaces --method pca --config " + f.config.string()).exit_code == 0);
  Subspace p = load_subspace(f.root / "out" / "subspace_l1.sdsu");
  CHECK(p.method == SubspaceMethod::pca);

  // missing teacher checkpoint
  auto orphan = f.root / "orphan.json";
  nlohmann::json j = nlohmann::json::parse(read_text_file(f.config));
  j["teacher"]["checkpoint"] = (f.root / "missing.sdck").string();
  write_text_file(orphan, j.dump());
  CHECK(run_cli("extract-subspaces --config " + orphan.string()).exit_code == 2);
}

TEST_CASE("distill respects layer and method flags") {
  auto& f = CliFixture::instance();
  auto out = f.root / "run_flags";
  CliResult r = run_cli("--deterministic distill --config " + f.config.string() +
                        " --layers 1,2 --out " + out.string());
  CHECK(r.exit_code == 0);
  auto run = nlohmann::json::parse(slurp(out / "run.json"));
  CHECK(run.at("config").at("layer_bindings").get<std::vector<int>>() == std::vector<int>{1, 2});
  CHECK(fs::exists(out / "subspace_l1.sdsu"));
  CHECK(fs::exists(out / "subspace_l2.sdsu"));
  CHECK(!fs::exists(out / "subspace_l3.sdsu"));

  auto none_out = f.root / "run_none";
  CHECK(run_cli("--deterministic distill --config " + f.config.string() +
                " --layers none --out " + none_out.string()).exit_code == 0);
  auto none_run = nlohmann::json::parse(slurp(none_out / "run.json"));
  CHECK(none_run.at("config").at("layer_bindings").get<std::vector<int>>().empty());
  CHECK(none_run.at("active_bindings").empty());

  auto wb_out = f.root / "run_wb";
  CHECK(run_cli("--deterministic distill --config " + f.config.string() +
                " --method wb_baseline --out " + wb_out.string()).exit_code == 0);
  auto wb_run = nlohmann::json::parse(slurp(wb_out / "run.json"));
  CHECK(wb_run.at("config").at("method").get<std::string>() == "wb_baseline");

  // resolved config round-trips through the strict parser
  CHECK(fs::exists(out / "config.json"));
  auto resolved = nlohmann::json::parse(slurp(out / "config.json"));
  DistillConfig back;
  from_json(resolved.at("distill"), back);
  CHECK(back.layer_bindings == std::vector<int>{1, 2});
}

TEST_CASE("divergent run exits 4 naming the epoch") {
  auto& f = CliFixture::instance();
  auto hot = f.root / "hot.json";
  nlohmann::json j = nlohmann::json::parse(read_text_file(f.config));
  j["distill"]["learning_rate"] = 1e4;
  j["distill"]["epochs"] = 30;
  write_text_file(hot, j.dump());
  CliResult r = run_cli("distill --config " + hot.string() + " --out " +
                        (f.root / "run_hot").string());
  CHECK(r.exit_code == 4);
  CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("alpha sweep selects the best grid cell by validation accuracy") {
  auto& f = CliFixture::instance();
  auto out = f.root / "run_sweep";
  CliResult r = run_cli("--deterministic distill --config " + f.config.string() +
                        " --alpha-sweep --out " + out.string());
  CHECK(r.exit_code == 0);
  std::string csv = slurp(out / "alpha_sweep.csv");

  double best_acc = -1.0, best_alpha = 0.0;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string alpha_s, status_s, val_s;
    std::getline(cells, alpha_s, ',');
    std::getline(cells, status_s, ',');
    std::getline(cells, val_s, ',');
    if (status_s != "ok") continue;
    double val = std::stod(val_s);
    if (val > best_acc) {
      best_acc = val;
      best_alpha = std::stod(alpha_s);
    }
  }
  auto resolved = nlohmann::json::parse(slurp(out / "config.json"));
  CHECK(resolved.at("distill").at("alpha").get<double>() == doctest::Approx(best_alpha));
  auto run = nlohmann::json::parse(slurp(out / "run.json"));
  CHECK(run.at("final_val_accuracy").get<double>() == doctest::Approx(best_acc));
}

TEST_CASE("report aggregates seeds with recomputable standard errors") {
  auto& f = CliFixture::instance();
  std::vector<double> accs;
  for (int seed : {1, 2, 3}) {
    auto dir = f.root / ("run_seed" + std::to_string(seed));
    nlohmann::json j = nlohmann::json::parse(read_text_file(f.config));
    j["distill"]["seed"] = seed;
    auto cfg = f.root / ("cfg_seed" + std::to_string(seed) + ".json");
    write_text_file(cfg, j.dump());
    CHECK(run_cli("--deterministic distill --config " + cfg.string() + " --out " +
                  dir.string()).exit_code == 0);
    auto run = nlohmann::json::parse(slurp(dir / "run.json"));
    accs.push_back(run.at("final_val_accuracy").get<double>());
  }
  auto rep = f.root / "rep";
  std::string dirs = (f.root / "run_seed1").string() + " " + (f.root / "run_seed2").string() +
                     " " + (f.root / "run_seed3").string();
  CHECK(run_cli("--deterministic report " + dirs + " --out " + rep.string()).exit_code == 0);

  double mean = (accs[0] + accs[1] + accs[2]) / 3.0;
  double ss = 0.0;
  for (double a : accs) ss += (a - mean) * (a - mean);
  double se = std::sqrt(ss / 2.0) / std::sqrt(3.0);

  std::string csv = slurp(rep / "summary.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  REQUIRE(std::getline(lines, line));
  std::istringstream cells(line);
  std::string label, runs_s, mean_s, se_s;
  std::getline(cells, label, ',');
  std::getline(cells, runs_s, ',');
  std::getline(cells, mean_s, ',');
  std::getline(cells, se_s, ',');
  CHECK(runs_s == "3");
  CHECK(std::stod(mean_s) == doctest::Approx(mean).epsilon(1e-12));
  CHECK(std::stod(se_s) == doctest::Approx(se).epsilon(1e-12));

  // empty input is a usage error
  CHECK(run_cli("report --out " + (f.root / "rep2").string()).exit_code == 2);
}

TEST_CASE("band and xai emit well-formed SVG") {
  auto& f = CliFixture::instance();
  auto band = f.root / "band";
  CHECK(run_cli("--deterministic band --seed 2 --epochs 15 --out " + band.string()).exit_code ==
        0);
  CHECK(xml_well_formed(slurp(band / "kernels.svg")));
  CHECK(fs::exists(band / "scores.csv"));

  auto xai = f.root / "xai";
  CHECK(run_cli("--deterministic xai --config " + f.config.string() + " --students " +
                (f.root / "run_flags" / "student.sdck").string() + " --patch 6 --out " +
                xai.string()).exit_code == 0);
  CHECK(xml_well_formed(slurp(xai / "attribution_scatter.svg")));
  std::string csv = slurp(xai / "attribution_scatter.csv");
  CHECK(csv.find("pearson") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected") {
  auto& f = CliFixture::instance();
  auto weird = f.root / "weird.json";
  nlohmann::json j = nlohmann::json::parse(read_text_file(f.config));
  j["surprise"] = true;
  write_text_file(weird, j.dump());
  CliResult r = run_cli("train-teacher --config " + weird.string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("surprise") != std::string::npos);
}

TEST_CASE("inconsistent run schemas exit 5") {
  auto& f = CliFixture::instance();
  auto broken = f.root / "broken_run";
  fs::create_directories(broken);
  write_text_file(broken / "run.json", "{\"label\": \"x\"}");
  CliResult r = run_cli("report " + broken.string() + " --out " + (f.root / "rep3").string());
  CHECK(r.exit_code == 5);
  auto err = nlohmann::json::parse(r.err);
  CHECK(err.at("code").get<int>() == 5);
}

TEST_CASE("ablate writes a league table and report plots the subset trend") {
  auto& f = CliFixture::instance();
  auto out = f.root / "ablation";
  CliResult r = run_cli("ablate --config " + f.config.string() +
                        " --ablations output_only --layer-subsets 'none;1;1,2'" +
                        " --seeds 1 2 --out " + out.string());
  CHECK(r.exit_code == 0);
  std::string league = slurp(out / "league.csv");
  // base + 1 ablation + 3 subsets, 2 seeds each
  CHECK(std::count(league.begin(), league.end(), '\n') >= 8);
  CHECK(league.find("layers_none") != std::string::npos);
  CHECK(league.find("standard_error") != std::string::npos);

  // aggregate the subset cells: the layer-trend plot appears
  std::string dirs;
  for (const char* cell : {"layers_none", "layers_1", "layers_1_2"})
    for (int seed : {1, 2})
      dirs += " " + (out / (std::string(cell) + "_seed" + std::to_string(seed))).string();
  auto rep = f.root / "rep_subsets";
  CHECK(run_cli("--deterministic report" + dirs + " --out " + rep.string()).exit_code == 0);
  CHECK(fs::exists(rep / "summary.csv"));
  CHECK(fs::exists(rep / "accuracy_vs_layers.svg"));
  CHECK(xml_well_formed(slurp(rep / "accuracy_vs_layers.svg")));
}

TEST_CASE("report draws accuracy against the training fraction") {
  auto& f = CliFixture::instance();
  std::string dirs;
  for (double frac : {0.5, 1.0}) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(f.config));
    j["distill"]["training_fraction"] = frac;
    auto cfg = f.root / ("cfg_frac" + std::to_string(int(frac * 100)) + ".json");
    write_text_file(cfg, j.dump());
    auto dir = f.root / ("run_frac" + std::to_string(int(frac * 100)));
    CHECK(run_cli("--deterministic distill --config " + cfg.string() + " --out " +
                  dir.string()).exit_code == 0);
    dirs += " " + dir.string();
  }
  auto rep = f.root / "rep_fractions";
  CHECK(run_cli("--deterministic report" + dirs + " --out " + rep.string()).exit_code == 0);
  CHECK(fs::exists(rep / "accuracy_vs_fraction.svg"));
  CHECK(xml_well_formed(slurp(rep / "accuracy_vs_fraction.svg")));
}
