#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "akhcr/synth.hpp"
#include "akhcr/train.hpp"

// End-to-end runs on a small synthetic dataset, through both the library API
// and the installed CLI binary.

using namespace akhcr;
namespace fs = std::filesystem;

namespace {

Logger quiet() {
  return [](const std::string&) {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(AKHCR_CLI_PATH) + " " + args + " 2>&1";
  CliResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe)) res.output += buf;
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& name) : root(name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
};

TrainOptions base_options(const fs::path& data, const fs::path& out) {
  TrainOptions opts;
  opts.data_root = data.string();
  opts.out_dir = out.string();
  opts.seed = 7;
  opts.batch_size = 8;
  opts.schedule = LrSchedule::parse("2x0.001");
  opts.val_fraction = 0.28;
  opts.blank_threshold = 0.02;
  opts.log = quiet();
  return opts;
}

}  // namespace

TEST_CASE("train_model produces curves, checkpoints and reproducible bytes") {
  TempTree tmp("akhcr_test_train");
  const fs::path data = tmp.root / "data";
  synth_dataset(data.string(), 5, 8, 3, quiet());

  TrainOptions opts = base_options(data, tmp.root / "run_a");
  const TrainResult a = train_model(opts);

  REQUIRE(a.curves.size() == 2);
  CHECK(a.curves[0].epoch == 1);
  CHECK(a.curves[1].epoch == 2);
  for (const auto& row : a.curves) CHECK(row.lr == lr_for_epoch(opts.schedule, row.epoch));
  CHECK(fs::exists(a.curves_csv));
  CHECK(fs::exists(a.final_checkpoint));
  CHECK(fs::exists(a.best_checkpoint));
  CHECK(fs::exists(a.index_file));
  CHECK(fs::exists(a.run_config_file));

  // split conformance on the real index: 5 classes x 8 -> 2 val / 6 train each
  const auto val_counts = a.index.class_counts(SplitTag::val);
  for (const auto n : val_counts) CHECK(n == 2);

  // identical seeds, identical curve bytes
  opts.out_dir = (tmp.root / "run_b").string();
  const TrainResult b = train_model(opts);
  CHECK(slurp(a.curves_csv) == slurp(b.curves_csv));

  // different seed diverges
  opts.out_dir = (tmp.root / "run_c").string();
  opts.seed = 8;
  const TrainResult c = train_model(opts);
  CHECK(slurp(a.curves_csv) != slurp(c.curves_csv));
}

TEST_CASE("eval after train reproduces the logged validation accuracy") {
  TempTree tmp("akhcr_test_evalmatch");
  const fs::path data = tmp.root / "data";
  synth_dataset(data.string(), 5, 8, 4, quiet());

  TrainOptions opts = base_options(data, tmp.root / "run");
  opts.schedule = LrSchedule::parse("1x0.001");
  const TrainResult res = train_model(opts);

  // reload the final checkpoint into a fresh state and evaluate
  const Checkpoint ck = load_checkpoint(res.final_checkpoint);
  ModelGraph graph = build_graph(ArchConfig::akhcrnet(static_cast<int>(ck.class_names.size())));
  ModelState state = init_state<float>(graph, 0);
  AdamState adam;
  apply_checkpoint(ck, state, adam);
  const DatasetIndex index = read_index(res.index_file, data.string());
  const EvalOutcome outcome =
      evaluate_split(graph, state, index, SplitTag::val, opts.batch_size, 2, quiet());

  CHECK(outcome.accuracy == doctest::Approx(res.curves.back().val_accuracy).epsilon(1e-6));
  CHECK(outcome.mean_cce == doctest::Approx(res.curves.back().val_loss).epsilon(1e-6));
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run") {
  TempTree tmp("akhcr_test_resume");
  const fs::path data = tmp.root / "data";
  synth_dataset(data.string(), 4, 6, 5, quiet());

  // uninterrupted: 4 epochs
  TrainOptions full = base_options(data, tmp.root / "full");
  full.schedule = LrSchedule::parse("4x0.001");
  const TrainResult whole = train_model(full);
  REQUIRE(whole.curves.size() == 4);

  // first half: 2 epochs under the same seed
  TrainOptions half = base_options(data, tmp.root / "half");
  half.schedule = LrSchedule::parse("2x0.001");
  const TrainResult part1 = train_model(half);

  // second half resumes the checkpoint against the full schedule
  TrainOptions rest = base_options(data, tmp.root / "rest");
  rest.schedule = LrSchedule::parse("4x0.001");
  rest.resume_checkpoint = part1.final_checkpoint;
  const TrainResult part2 = train_model(rest);
  REQUIRE(part2.curves.size() == 2);
  CHECK(part2.curves[0].epoch == 3);

  // trajectories coincide: rows 3-4 and the final checkpoint bytes
  CHECK(part2.curves[0].train_loss == doctest::Approx(whole.curves[2].train_loss).epsilon(1e-12));
  CHECK(part2.curves[1].val_accuracy == doctest::Approx(whole.curves[3].val_accuracy).epsilon(1e-12));
  CHECK(slurp(part2.final_checkpoint) == slurp(whole.final_checkpoint));

  // resuming past the schedule is a config error
  TrainOptions overrun = base_options(data, tmp.root / "overrun");
  overrun.schedule = LrSchedule::parse("2x0.001");
  overrun.resume_checkpoint = part1.final_checkpoint;
  CHECK_THROWS_AS(train_model(overrun), ConfigError);
}

TEST_CASE("cli synth, train, eval and predict work together") {
  TempTree tmp("akhcr_test_cli");
  const fs::path data = tmp.root / "data";
  const fs::path run = tmp.root / "run";
  const fs::path evaldir = tmp.root / "eval";

  // synth
  auto synth = run_cli("synth --out " + data.string() + " --classes 5 --per-class 6 --seed 1");
  CHECK(synth.exit_code == 0);
  std::int64_t files = 0;
  for (int c = 1; c <= 5; ++c)
    for (const auto& e : fs::directory_iterator(data / std::to_string(c)))
      if (e.is_regular_file() && e.path().extension() == ".png") ++files;
  CHECK(files == 30);
  CHECK(fs::exists(data / "run_config.txt"));

  // rerun is byte-identical
  const std::string probe = (data / "3" / "img_0002.png").string();
  const std::string before = slurp(probe);
  auto synth2 = run_cli("synth --out " + data.string() + " --classes 5 --per-class 6 --seed 1");
  CHECK(synth2.exit_code == 0);
  CHECK(slurp(probe) == before);

  // per-class 1 violates the split precondition
  auto bad_synth = run_cli("synth --out " + (tmp.root / "bad").string() + " --per-class 1");
  CHECK(bad_synth.exit_code == 2);

  // train a single epoch
  auto train = run_cli("train --data " + data.string() + " --out " + run.string() +
                       " --seed 7 --batch-size 8 --lr-schedule 1x0.001");
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(run / "curves.csv"));
  CHECK(fs::exists(run / "run_config.txt"));
  CHECK(fs::exists(run / "split_index.tsv"));
  {
    std::ifstream curves(run / "curves.csv");
    std::string header, row;
    std::getline(curves, header);
    CHECK(header == "epoch,lr,train_loss,val_loss,val_accuracy");
    REQUIRE(std::getline(curves, row));
    CHECK(row.rfind("1,0.001,", 0) == 0);
  }

  // missing dataset root is an I/O error
  auto noio = run_cli("train --data " + (tmp.root / "nope").string() + " --out " +
                      (tmp.root / "x").string());
  CHECK(noio.exit_code == 3);

  // eval emits the report files and prints accuracy
  auto eval = run_cli("eval --data " + data.string() + " --checkpoint " +
                      (run / "model_final.akhw").string() + " --out " + evaldir.string() +
                      " --index " + (run / "split_index.tsv").string());
  CHECK(eval.exit_code == 0);
  CHECK(eval.output.find("val accuracy") != std::string::npos);
  {
    std::ifstream report(evaldir / "report.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(report, line)) ++rows;
    CHECK(rows == 1 + 5 + 2);
  }
  CHECK(fs::exists(evaldir / "confusion.csv"));
  CHECK(fs::exists(evaldir / "run_config.txt"));

  // predict: ranked lines, deterministic, bounded topk
  const std::string img = (data / "2" / "img_0000.png").string();
  auto pred = run_cli("predict --checkpoint " + (run / "model_final.akhw").string() +
                      " --image " + img + " --topk 3");
  CHECK(pred.exit_code == 0);
  std::istringstream lines(pred.output);
  std::string line;
  std::vector<double> probs;
  int rank = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++rank;
    std::stringstream ss(line);
    std::string r, name, prob;
    std::getline(ss, r, ',');
    std::getline(ss, name, ',');
    std::getline(ss, prob, ',');
    CHECK(std::stoi(r) == rank);
    probs.push_back(std::stod(prob));
  }
  CHECK(rank == 3);
  for (std::size_t i = 1; i < probs.size(); ++i) CHECK(probs[i - 1] >= probs[i]);

  auto pred2 = run_cli("predict --checkpoint " + (run / "model_final.akhw").string() +
                       " --image " + img + " --topk 3");
  CHECK(pred2.output == pred.output);

  auto toobig = run_cli("predict --checkpoint " + (run / "model_final.akhw").string() +
                        " --image " + img + " --topk 85");
  CHECK(toobig.exit_code == 2);

  // a split with one class absent from val: flagged rows, still exit 0
  const fs::path degen_index = tmp.root / "degen_index.tsv";
  {
    std::ifstream in(run / "split_index.tsv");
    std::ofstream out(degen_index);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("5/", 0) == 0) {
        const auto tab = line.rfind('\t');
        line = line.substr(0, tab) + "\ttrain";  // class 5 loses its val rows
      }
      out << line << "\n";
    }
  }
  auto degen = run_cli("eval --data " + data.string() + " --checkpoint " +
                       (run / "model_final.akhw").string() + " --out " +
                       (tmp.root / "degen_eval").string() + " --index " +
                       degen_index.string());
  CHECK(degen.exit_code == 0);
  CHECK(degen.output.find("degenerate") != std::string::npos);

  // corrupt checkpoint is a format error
  const fs::path broken = tmp.root / "broken.akhw";
  {
    std::ofstream out(broken, std::ios::binary);
    out << "AKHWgarbagegarbage";
  }
  auto fmt = run_cli("predict --checkpoint " + broken.string() + " --image " + img);
  CHECK(fmt.exit_code == 4);

  // bad flags are usage errors
  auto usage = run_cli("train --no-such-flag");
  CHECK(usage.exit_code == 2);
  auto nosub = run_cli("");
  CHECK(nosub.exit_code == 2);
}

TEST_CASE("cli reads key = value config files with flags taking precedence") {
  TempTree tmp("akhcr_test_cfg");
  const fs::path cfg = tmp.root / "synth.cfg";
  {
    std::ofstream out(cfg);
    out << "out = " << (tmp.root / "from_config").string() << "\n";
    out << "classes = 3\n";
    out << "per-class = 4\n";
    out << "seed = 2\n";
  }
  auto from_cfg = run_cli("synth --config " + cfg.string());
  CHECK(from_cfg.exit_code == 0);
  CHECK(fs::exists(tmp.root / "from_config" / "3"));

  // flag overrides the config value
  auto overridden = run_cli("synth --config " + cfg.string() + " --out " +
                            (tmp.root / "flag_wins").string());
  CHECK(overridden.exit_code == 0);
  CHECK(fs::exists(tmp.root / "flag_wins" / "3"));

  // train reads the documented lr_schedule key
  const fs::path tcfg = tmp.root / "train.cfg";
  {
    std::ofstream out(tcfg);
    out << "data = " << (tmp.root / "from_config").string() << "\n";
    out << "out = " << (tmp.root / "cfg_run").string() << "\n";
    out << "lr_schedule = 1x0.001\n";
    out << "batch_size = 6\n";
    out << "seed = 3\n";
  }
  auto trained = run_cli("train --config " + tcfg.string());
  CHECK(trained.exit_code == 0);
  std::ifstream curves(tmp.root / "cfg_run" / "curves.csv");
  std::string header, row;
  std::getline(curves, header);
  REQUIRE(std::getline(curves, row));
  CHECK(row.rfind("1,0.001,", 0) == 0);
  CHECK(!std::getline(curves, row));  // exactly one epoch

  // a missing required key is a usage error
  auto missing = run_cli("synth --config " + cfg.string() + " --out \"\"");
  CHECK(missing.exit_code == 2);
}
