#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "immcognito/data.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "immcognito-test-cli";

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Result {
  int status = -1;
  std::string err;
};

Result run(const std::string& args) {
  const fs::path err = kRoot / "stderr.txt";
  const std::string cmd = std::string(IMMCOGNITO_CLI) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
}

// The single run directory created under `out`.
fs::path run_dir(const fs::path& out) {
  fs::path found;
  int count = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.is_directory()) {
      found = e.path();
      ++count;
    }
  REQUIRE(count == 1);
  return found;
}

// Runs a subcommand into its own output root and returns the run directory.
fs::path step(const std::string& name, const std::string& args) {
  const fs::path out = kRoot / name;
  fs::remove_all(out);
  const Result r = run(args + " --out " + out.string());
  INFO(r.err);
  REQUIRE(r.status == 0);
  return run_dir(out);
}

const std::string kModel = " --hidden 8 --message 8 --key-dim 4 --value-dim 4 --heads 2 --output-dim 8";

}  // namespace

TEST_CASE("usage errors") {
  fs::create_directories(kRoot);
  Result r = run("");
  CHECK(r.status != 0);
  r = run("synth --definitely-not-a-flag");
  CHECK(r.status != 0);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(r.err.find("--definitely-not-a-flag") != std::string::npos);
  r = run("frobnicate");
  CHECK(r.status != 0);
  r = run("train-classifier --help");
  CHECK(r.status == 0);
}

TEST_CASE("missing input file") {
  fs::create_directories(kRoot);
  const Result r = run("preprocess --input /nonexistent/seq.jsonl --out " + (kRoot / "missing").string());
  CHECK(r.status != 0);
  CHECK(r.err.find("/nonexistent/seq.jsonl") != std::string::npos);
}

TEST_CASE("pipeline") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);

  const fs::path synth = step("synth", "synth --subjects 3 --gestures 3 --sequences-per-cell 4 --synth-frames 4 "
                                       "--synth-points 6");
  CHECK(fs::exists(synth / "config.resolved"));
  CHECK(fs::exists(synth / "run.log"));
  const fs::path seqs = synth / "sequences.jsonl";
  CHECK(immcognito::load_sequences(seqs).size() == 36);

  const fs::path pre = step("preprocess", "preprocess --frames 4 --points 4 --input " + seqs.string());
  const fs::path grids = pre / "grids.imcg";
  REQUIRE(fs::exists(grids));

  SUBCASE("re-running from config.resolved reproduces the output") {
    const fs::path again = step("preprocess-again", "preprocess --config " + (pre / "config.resolved").string());
    CHECK(slurp(again / "grids.imcg") == slurp(grids));
  }

  const fs::path split = step("split", "split --input " + grids.string());
  const std::string sets =
      " --train-set " + (split / "train.imcg").string() + " --val-set " + (split / "val.imcg").string();
  const fs::path g = step("g", "train-classifier --task gesture --classifier-epochs 2" + kModel + sets);
  const fs::path u = step("u", "train-classifier --task identity --classifier-epochs 2" + kModel + sets);
  REQUIRE(fs::exists(g / "model.imcp"));
  CHECK(fs::exists(g / "history.csv"));
  CHECK(fs::exists(g / "checkpoint.imcp"));
  const std::string frozen =
      " --gesture-model " + (g / "model.imcp").string() + " --identity-model " + (u / "model.imcp").string();

  SUBCASE("disabled identity loss keeps the gate closed") {
    const fs::path ae = step("ae-nodeid", "train-autoencoder --max-epochs 2 --no-deid-loss" + kModel + sets + frozen);
    std::istringstream lines(slurp(ae / "history.csv"));
    std::string line;
    std::getline(lines, line);
    int rows = 0;
    while (std::getline(lines, line)) {
      std::vector<std::string> cells;
      std::stringstream row(line);
      for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
      REQUIRE(cells.size() == 8);
      CHECK(cells[5] == "0");
      ++rows;
    }
    CHECK(rows == 2);
    CHECK(slurp(ae / "run.log").find("evaluated 0 times") != std::string::npos);
    CHECK(slurp(ae / "config.resolved").find("deid_loss = false") != std::string::npos);
  }

  SUBCASE("ablation switches reach the config") {
    const fs::path ae = step("ae-ablate", "train-autoencoder --max-epochs 1 --no-temporal-edges --no-max-pool" +
                                              kModel + sets + frozen);
    const std::string conf = slurp(ae / "config.resolved");
    CHECK(conf.find("graph_mode = within_frame") != std::string::npos);
    CHECK(conf.find("decoder_input = local") != std::string::npos);
  }

  SUBCASE("de-identify, evaluate, baseline and report") {
    const fs::path ae = step("ae", "train-autoencoder --max-epochs 2 --alpha 1 --beta 2 --gamma 1 --delta 2 --tau 0.5"
                                   " --k 2" + kModel + sets + frozen);
    const fs::path model = ae / "autoencoder.imcp";
    REQUIRE(fs::exists(model));
    const fs::path test = split / "test.imcg";

    const fs::path deid = step("deid", "deidentify --input " + test.string() + " --autoencoder-model " + model.string());
    CHECK(immcognito::read_grid_file(deid / "deidentified.imcg").size() == immcognito::read_grid_file(test).size());

    const fs::path ev = step("eval", "evaluate --input " + test.string() + " --model " + (u / "model.imcp").string());
    const auto metrics = nlohmann::json::parse(slurp(ev / "metrics.json"));
    CHECK(metrics["rows"][0]["task"] == "identity");
    CHECK(fs::exists(ev / "roc.csv"));

    const fs::path base = step("baseline", "baseline --method rotation --theta 30 --input " + test.string() + frozen);
    CHECK(fs::exists(base / "perturbed.imcg"));
    CHECK(nlohmann::json::parse(slurp(base / "scorecard.json"))["rows"][1]["variant"] == "rotation");

    const fs::path rep = step("report", "report --with-baselines --test-set " + test.string() + frozen +
                                            " --autoencoder-model " + model.string());
    const auto card = nlohmann::json::parse(slurp(rep / "scorecard.json"));
    CHECK(card["rows"].size() == 4 + 2 * 9);
    CHECK(fs::exists(rep / "scorecard.csv"));
  }

  SUBCASE("sweep writes one scorecard per value") {
    const fs::path sw = step("sweep", "sweep --param k --values 2,4 --max-epochs 1" + kModel + sets + frozen +
                                          " --test-set " + (split / "test.imcg").string());
    CHECK(fs::exists(sw / "k-2" / "scorecard.json"));
    CHECK(fs::exists(sw / "k-4" / "scorecard.json"));
    CHECK(slurp(sw / "k-4" / "config.resolved").find("\nk = 4\n") != std::string::npos);
    CHECK(fs::exists(sw / "sweep.csv"));
  }
}

TEST_CASE("gradcheck subcommand") {
  fs::create_directories(kRoot);
  const fs::path dir = step("gradcheck", "gradcheck");
  CHECK(fs::exists(dir / "gradcheck.txt"));
}
