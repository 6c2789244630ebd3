#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "idfe/config.hpp"

using idfe::Config;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& leaf) {
  const auto d = fs::temp_directory_path() / "idfe_cli_test" / leaf;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr combined
};

// Drives the installed binary the way a shell user would; IDFE_BIN is baked
// in by the build so the test never guesses at paths.
RunResult run_cli(const std::string& argline, const fs::path& scratch) {
  const fs::path log = scratch / "last_run_output.txt";
  const std::string cmd =
      std::string(IDFE_BIN) + " " + argline + " >" + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WEXITSTATUS(raw);
  r.output = slurp(log);
  return r;
}

// Non-comment lines of a TSV file.
std::vector<std::string> data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

// Small corpus + flags shared by the pipeline tests.
const char* kSynthArgs =
    "--set domains=3 --set feature_dim=6 --set layers=2 --set frames_min=5 "
    "--set frames_max=9 --set utts_per_class=8";
const char* kModelArgs =
    "--set num_heads=2 --set value_dim=4 --set embedding_dim=16 --set hidden_dim=8";

}  // namespace

TEST_CASE("config files parse keys, comments, and typed values") {
  const auto dir = temp_dir("config_parse");
  spit(dir / "a.cfg",
       "# run settings\n"
       "alpha = 0.25\n"
       "epochs=7\n"
       "  name   =  baseline run \t\n"
       "flag = true\n"
       "seed = 18446744073709551615\n"
       "\n"
       "empty =\n");

  const Config cfg = Config::from_file(dir / "a.cfg");
  CHECK(cfg.get_double("alpha", 0.0) == 0.25);
  CHECK(cfg.get_int("epochs", 0) == 7);
  CHECK(cfg.get_str("name", "") == "baseline run");
  CHECK(cfg.get_bool("flag", false) == true);
  CHECK(cfg.get_u64("seed", 0) == 18446744073709551615ULL);
  CHECK(cfg.get_str("empty", "x").empty());
  CHECK(cfg.get_int("missing", 41) == 41);
  CHECK(cfg.get_double("missing", 1.5) == 1.5);
  CHECK(!cfg.has("missing"));
  CHECK(cfg.has("alpha"));
}

TEST_CASE("config files reject malformed lines and duplicate keys") {
  const auto dir = temp_dir("config_bad");

  spit(dir / "dup.cfg", "a = 1\na = 2\n");
  CHECK_THROWS_WITH_AS(Config::from_file(dir / "dup.cfg"), doctest::Contains("duplicate key 'a'"),
                       idfe::ConfigError);

  spit(dir / "noeq.cfg", "just a line\n");
  CHECK_THROWS_WITH_AS(Config::from_file(dir / "noeq.cfg"),
                       doctest::Contains("expected key = value"), idfe::FormatError);

  spit(dir / "nokey.cfg", " = 3\n");
  CHECK_THROWS_AS(Config::from_file(dir / "nokey.cfg"), idfe::FormatError);

  CHECK_THROWS_AS(Config::from_file(dir / "absent.cfg"), idfe::AssetError);

  Config cfg;
  cfg.set("n", "12x");
  CHECK_THROWS_WITH_AS(cfg.get_int("n", 0), doctest::Contains("expects an integer"),
                       idfe::ConfigError);
  cfg.set("d", "0.5.2");
  CHECK_THROWS_AS(cfg.get_double("d", 0.0), idfe::ConfigError);
  cfg.set("b", "maybe");
  CHECK_THROWS_AS(cfg.get_bool("b", false), idfe::ConfigError);
  CHECK_THROWS_AS(cfg.set("", "v"), idfe::ConfigError);
}

TEST_CASE("config key restriction and canonical form") {
  Config cfg;
  cfg.set("beta", "2");
  cfg.set("alpha", "1");
  cfg.restrict_to({"alpha", "beta"});
  CHECK_THROWS_WITH_AS(cfg.restrict_to({"alpha"}), doctest::Contains("unknown key 'beta'"),
                       idfe::ConfigError);

  CHECK(cfg.canonical() == "alpha = 1\nbeta = 2\n");  // sorted, normalized spacing

  const auto h1 = cfg.hash();
  CHECK(h1 == cfg.hash());  // stable
  cfg.set("alpha", "3");
  CHECK(cfg.hash() != h1);

  // set() overwrites where a file would have complained
  CHECK(cfg.get_int("alpha", 0) == 3);
}

TEST_CASE("synth writes a reproducible corpus with a resolved snapshot") {
  const auto dir = temp_dir("synth");
  const std::string common = std::string("synth --seed 3 ") + kSynthArgs;

  const auto r1 = run_cli(common + " --out " + (dir / "a").string(), dir);
  CHECK(r1.code == 0);
  CHECK(r1.output.find("synth0: bona 8, spoof 8") != std::string::npos);
  CHECK(r1.output.find("wrote 48 stacks") != std::string::npos);

  const auto r2 = run_cli(common + " --out " + (dir / "b").string(), dir);
  REQUIRE(r2.code == 0);

  // identical seed -> byte-identical outputs
  CHECK(slurp(dir / "a" / "manifest.tsv") == slurp(dir / "b" / "manifest.tsv"));
  CHECK(!slurp(dir / "a" / "stacks" / "synth0_bona_0.idf1").empty());
  CHECK(slurp(dir / "a" / "stacks" / "synth0_bona_0.idf1") ==
        slurp(dir / "b" / "stacks" / "synth0_bona_0.idf1"));

  std::size_t stack_files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "stacks")) {
    (void)e;
    ++stack_files;
  }
  CHECK(stack_files == 48);  // 3 domains x 2 classes x 8

  // the override shows up in the snapshot
  const auto r3 = run_cli(common + " --set bias_magnitude=0 --out " + (dir / "c").string(), dir);
  REQUIRE(r3.code == 0);
  CHECK(slurp(dir / "c" / "resolved.cfg").find("bias_magnitude = 0\n") != std::string::npos);
  CHECK(slurp(dir / "a" / "resolved.cfg").find("bias_magnitude") == std::string::npos);
}

TEST_CASE("train, eval, probe, and export run as a pipeline") {
  const auto dir = temp_dir("pipeline");
  REQUIRE(run_cli(std::string("synth --seed 3 ") + kSynthArgs + " --out " + (dir / "c").string(),
                  dir)
              .code == 0);
  const std::string manifest = (dir / "c" / "manifest.tsv").string();

  const auto tr = run_cli(std::string("train --seed 5 ") + kModelArgs + " --set manifest=" +
                              manifest + " --set alpha=0.1 --set epochs=2 --set batch_size=16" +
                              " --out " + (dir / "t").string(),
                          dir);
  REQUIRE(tr.code == 0);
  CHECK(tr.output.find("epoch 1") != std::string::npos);
  CHECK(tr.output.find("final checkpoint:") != std::string::npos);
  const std::string ck = (dir / "t" / "epoch_002.idfc").string();
  REQUIRE(fs::exists(ck));
  CHECK(fs::exists(dir / "t" / "train_log.tsv"));

  const auto ev = run_cli("eval --set checkpoint=" + ck + " --set manifest=" + manifest +
                              " --out " + (dir / "e").string(),
                          dir);
  REQUIRE(ev.code == 0);

  // report: header, one row per domain, pooled row; pooled equals the mean of
  // the printed rows within half of the last printed digit
  const auto report = data_lines(dir / "e" / "report.tsv");
  REQUIRE(report.size() == 5);
  CHECK(report[0] == "domain\teer%\tthreshold");
  double sum = 0.0, pooled = -1.0;
  for (std::size_t i = 1; i < report.size(); ++i) {
    std::istringstream ss(report[i]);
    std::string name;
    double eer = 0.0;
    ss >> name >> eer;
    REQUIRE(!ss.fail());
    if (name == "pooled") {
      pooled = eer;
    } else {
      CHECK(name == "d" + std::to_string(i - 1));
      sum += eer;
    }
  }
  CHECK(pooled >= 0.0);
  CHECK(std::abs(pooled - sum / 3.0) <= 0.005 + 1e-9);
  CHECK(data_lines(dir / "e" / "scores.tsv").size() == 48);

  const auto pr = run_cli("probe --seed 1 --set checkpoint=" + ck + " --set manifest=" + manifest +
                              " --out " + (dir / "p").string(),
                          dir);
  REQUIRE(pr.code == 0);
  CHECK(pr.output.find("domain probe accuracy") != std::string::npos);
  CHECK(pr.output.find("chance 0.3333") != std::string::npos);
  const auto probe_rows = data_lines(dir / "p" / "probe.tsv");
  REQUIRE(probe_rows.size() == 2);
  CHECK(probe_rows[0] == "accuracy\tchance");

  const auto ex = run_cli("export-emb --set checkpoint=" + ck + " --set manifest=" + manifest +
                              " --out " + (dir / "x").string(),
                          dir);
  REQUIRE(ex.code == 0);
  CHECK(slurp(dir / "x" / "embeddings.tsv").rfind("# idfe-emb v1\n", 0) == 0);
  CHECK(data_lines(dir / "x" / "embeddings.tsv").size() == 48);
}

TEST_CASE("identical seeds reproduce checkpoints and scores byte for byte") {
  const auto dir = temp_dir("determinism");
  REQUIRE(run_cli(std::string("synth --seed 11 ") + kSynthArgs + " --out " + (dir / "c").string(),
                  dir)
              .code == 0);
  const std::string manifest = (dir / "c" / "manifest.tsv").string();
  const std::string train_args = std::string("train --seed 7 ") + kModelArgs +
                                 " --set manifest=" + manifest +
                                 " --set alpha=0.1 --set epochs=2 --set batch_size=16";

  REQUIRE(run_cli(train_args + " --out " + (dir / "t1").string(), dir).code == 0);
  REQUIRE(run_cli(train_args + " --out " + (dir / "t2").string(), dir).code == 0);
  const auto ck1 = slurp(dir / "t1" / "epoch_002.idfc");
  REQUIRE(!ck1.empty());
  CHECK(ck1 == slurp(dir / "t2" / "epoch_002.idfc"));
  CHECK(slurp(dir / "t1" / "train_log.tsv") == slurp(dir / "t2" / "train_log.tsv"));

  const std::string eval_args = "eval --set checkpoint=" + (dir / "t1" / "epoch_002.idfc").string() +
                                " --set manifest=" + manifest;
  REQUIRE(run_cli(eval_args + " --out " + (dir / "e1").string(), dir).code == 0);
  REQUIRE(run_cli(eval_args + " --out " + (dir / "e2").string(), dir).code == 0);
  CHECK(slurp(dir / "e1" / "scores.tsv") == slurp(dir / "e2" / "scores.tsv"));
  CHECK(slurp(dir / "e1" / "report.tsv") == slurp(dir / "e2" / "report.tsv"));
}

TEST_CASE("cli maps failures to the documented exit codes") {
  const auto dir = temp_dir("exit_codes");
  REQUIRE(run_cli(std::string("synth --seed 3 ") + kSynthArgs + " --out " + (dir / "c").string(),
                  dir)
              .code == 0);
  const std::string manifest = (dir / "c" / "manifest.tsv").string();

  SUBCASE("single-domain composition with an adversary is a config error") {
    const auto r = run_cli(std::string("train ") + kModelArgs + " --set manifest=" + manifest +
                               " --set case=1 --set alpha=0.1 --set batch_size=8 --out " +
                               (dir / "t").string(),
                           dir);
    CHECK(r.code == 2);
    CHECK(r.output.find("domain adversarial objective requires D >= 2") != std::string::npos);
  }
  SUBCASE("an absurd learning rate diverges with exit code 3") {
    const auto r = run_cli(std::string("train ") + kModelArgs + " --set manifest=" + manifest +
                               " --set lr=1e20 --set epochs=2 --set batch_size=48 --out " +
                               (dir / "t").string(),
                           dir);
    CHECK(r.code == 3);
    CHECK(r.output.find("diverged") != std::string::npos);
  }
  SUBCASE("unknown config keys fail loudly") {
    const auto r = run_cli("synth --set bogus_key=1 --out " + (dir / "s").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.output.find("unknown key 'bogus_key'") != std::string::npos);
  }
  SUBCASE("malformed --set") {
    const auto r = run_cli("synth --set nonsense --out " + (dir / "s").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.output.find("KEY=VALUE") != std::string::npos);
  }
  SUBCASE("missing required key") {
    const auto r = run_cli("train --out " + (dir / "t").string(), dir);
    CHECK(r.code == 2);
    CHECK(r.output.find("'manifest' is required") != std::string::npos);
  }
  SUBCASE("missing manifest file") {
    const auto r = run_cli("train --set manifest=" + (dir / "nope.tsv").string() + " --out " +
                               (dir / "t").string(),
                           dir);
    CHECK(r.code == 2);
  }
  SUBCASE("bad flags") {
    const auto r = run_cli("--definitely-not-a-flag", dir);
    CHECK(r.code == 2);
  }
  SUBCASE("help exits zero") {
    const auto r = run_cli("--help", dir);
    CHECK(r.code == 0);
    CHECK(r.output.find("synth") != std::string::npos);
  }
}

TEST_CASE("the seed flag overrides the config file key") {
  const auto dir = temp_dir("seed_precedence");
  spit(dir / "run.cfg", "seed = 1\ndomains = 2\nfeature_dim = 6\nlayers = 2\nframes_min = 5\n"
                        "frames_max = 6\nutts_per_class = 2\n");
  const auto r = run_cli("synth --config " + (dir / "run.cfg").string() + " --seed 9 --out " +
                             (dir / "s").string(),
                         dir);
  REQUIRE(r.code == 0);
  const auto snapshot = slurp(dir / "s" / "resolved.cfg");
  CHECK(snapshot.find("seed = 9\n") != std::string::npos);
  CHECK(snapshot.find("seed = 1") == std::string::npos);
}
