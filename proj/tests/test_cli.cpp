#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "steal_lab/cli.hpp"

using namespace steal_lab;
namespace fs = std::filesystem;

extern char** environ;

namespace {

const std::string kBin = STEAL_LAB_BIN;
const fs::path kQuick = fs::path(STEAL_LAB_CONFIG_DIR) / "quick.yaml";

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Run run(const std::string& args, const fs::path& cwd = fs::temp_directory_path(),
        const std::string& env = "") {
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" + kBin + "' " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// A `serve` child process; reads the bound endpoint from its first stdout line.
struct Server {
  pid_t pid = -1;
  std::string url;

  explicit Server(const fs::path& checkpoint) {
    int fds[2];
    REQUIRE(pipe(fds) == 0);
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, fds[0]);
    const std::string ck = checkpoint.string();
    const char* argv[] = {kBin.c_str(), "serve", "--checkpoint", ck.c_str(), "--bind",
                          "127.0.0.1:0", nullptr};
    REQUIRE(posix_spawn(&pid, kBin.c_str(), &actions, nullptr, const_cast<char**>(argv),
                        environ) == 0);
    posix_spawn_file_actions_destroy(&actions);
    close(fds[1]);
    std::string line;
    char c;
    while (read(fds[0], &c, 1) == 1 && c != '\n') line += c;
    close(fds[0]);
    const auto at = line.find("http://");
    REQUIRE(at != std::string::npos);
    url = line.substr(at);
  }

  int stop() {
    kill(pid, SIGTERM);
    int status = 0;
    waitpid(pid, &status, 0);
    pid = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  ~Server() {
    if (pid > 0) stop();
  }
};

}  // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(run("").code == kExitUsage);
  CHECK(run("frobnicate").code == kExitUsage);
  CHECK(run("run-all --config " + kQuick.string() + " --bogus").code == kExitUsage);
  CHECK(run("run-all").code == kExitUsage);
  CHECK(run("--help").code == kExitOk);
  CHECK(run("steal --help").code == kExitOk);
}

TEST_CASE("config errors exit 1 naming the key and line") {
  TempDir dir("steal_lab_cli_badcfg");
  std::ofstream(dir.path / "bad.yaml") << "dataset:\n  kind: blobs\nfoo: 1\n";
  const Run r = run("run-all --config bad.yaml --out out", dir.path);
  CHECK(r.code == kExitFailure);
  CHECK(r.output.find("'foo'") != std::string::npos);
  CHECK(r.output.find("line 3") != std::string::npos);
  CHECK(!fs::exists(dir.path / "out"));
}

TEST_CASE("run-all writes reproducible outputs only under --out") {
  TempDir dir("steal_lab_cli_runall");
  TempDir cwd("steal_lab_cli_cwd");
  const std::string base = "run-all --config " + kQuick.string() + " --out ";
  REQUIRE(run(base + (dir.path / "a").string(), cwd.path).code == kExitOk);
  REQUIRE(run(base + (dir.path / "b").string(), cwd.path).code == kExitOk);
  CHECK(fs::is_empty(cwd.path));

  for (const char* f : {"report.csv", "curves.csv", "summary.txt", "timings.csv",
                        "curves/small_median.csv", "curves/small_seed3.csv",
                        "plots/variance_baseline_arch_B.svg", "plots/variance_mcd_arch_B.svg"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir.path / "a" / f));
  }
  for (const char* f : {"report.csv", "curves.csv", "summary.txt",
                        "plots/variance_mcd_arch_B.svg"}) {
    CAPTURE(f);
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
  }
  // Re-running into the same directory overwrites with the same bytes.
  const std::string before = slurp(dir.path / "a" / "report.csv");
  REQUIRE(run(base + (dir.path / "a").string(), cwd.path).code == kExitOk);
  CHECK(slurp(dir.path / "a" / "report.csv") == before);
}

TEST_CASE("gen-data and plot subcommands") {
  TempDir dir("steal_lab_cli_gen");
  REQUIRE(run("gen-data --config " + kQuick.string() + " --out " + (dir.path / "new").string())
              .code == kExitOk);
  CHECK(fs::exists(dir.path / "new/train.csv"));
  REQUIRE(run("gen-data --config " + kQuick.string() + " --out " + dir.path.string()).code ==
          kExitOk);
  const std::string train = slurp(dir.path / "train.csv");
  CHECK(!train.empty());
  CHECK(!slurp(dir.path / "test.csv").empty());
  REQUIRE(run("gen-data --config " + kQuick.string() + " --out " + dir.path.string()).code ==
          kExitOk);
  CHECK(slurp(dir.path / "train.csv") == train);

  std::ofstream(dir.path / "curves.csv") << "family,trunk,epoch,variance\nmcd,a,1,0.1\nbnn,a,1,0.2\n";
  const Run r = run("plot --curves " + (dir.path / "curves.csv").string() + " --out " +
                    (dir.path / "plots").string());
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(dir.path / "plots/variance_mcd_a.svg"));
  CHECK(fs::exists(dir.path / "plots/variance_bnn_a.svg"));

  std::ofstream(dir.path / "empty.csv") << "";
  CHECK(run("plot --curves " + (dir.path / "empty.csv").string() + " --out " +
            (dir.path / "p2").string())
            .code == kExitFailure);
}

TEST_CASE("evaluate a target against itself gives fidelity 1") {
  TempDir dir("steal_lab_cli_eval");
  const Run t = run("train-target --config " + kQuick.string() + " --size small --out " +
                    dir.path.string());
  REQUIRE(t.code == kExitOk);
  const fs::path ck = dir.path / "target_small.json";
  REQUIRE(fs::exists(ck));
  const Run e = run("evaluate --config " + kQuick.string() + " --checkpoint " + ck.string() +
                    " --oracle " + ck.string());
  CHECK(e.code == kExitOk);
  CHECK(e.output.find("fidelity 1.0000") != std::string::npos);
  CHECK(run("train-target --config " + kQuick.string() + " --size large --out " +
            dir.path.string())
            .code == kExitFailure);
}

TEST_CASE("steal through a served oracle matches the in-process run") {
  TempDir dir("steal_lab_cli_steal");
  REQUIRE(run("train-target --config " + kQuick.string() + " --out " + dir.path.string()).code ==
          kExitOk);
  const fs::path ck = dir.path / "target_small.json";
  const std::string base = "steal --config " + kQuick.string() + " --out ";
  REQUIRE(run(base + (dir.path / "local").string() + " --oracle " + ck.string()).code ==
          kExitOk);
  {
    Server server(ck);
    REQUIRE(run(base + (dir.path / "remote").string() + " --oracle " + server.url).code ==
            kExitOk);
    const Run e = run("evaluate --config " + kQuick.string() + " --checkpoint " + ck.string() +
                      " --oracle " + server.url);
    CHECK(e.output.find("fidelity 1.0000") != std::string::npos);
    CHECK(server.stop() == kExitOk);
  }
  const std::string report = slurp(dir.path / "local" / "report.csv");
  CHECK(report.find("blobs,target_small,") != std::string::npos);
  CHECK(report == slurp(dir.path / "remote" / "report.csv"));
  CHECK(slurp(dir.path / "local" / "curves.csv") == slurp(dir.path / "remote" / "curves.csv"));
  for (const char* f : {"baseline_arch_B.json", "mcd_arch_B.json", "deep_ensemble_arch_B.json"}) {
    CAPTURE(f);
    CHECK(slurp(dir.path / "local/surrogates" / f) == slurp(dir.path / "remote/surrogates" / f));
  }
}

TEST_CASE("steal against an unreachable endpoint fails cleanly") {
  TempDir dir("steal_lab_cli_unreach");
  const Run r = run("steal --config " + kQuick.string() + " --out " + dir.path.string() +
                    " --oracle http://127.0.0.1:1");
  CHECK(r.code == kExitFailure);
  CHECK(r.output.find("[error]") != std::string::npos);
}

TEST_CASE("STEAL_LAB_LOG sets the log level") {
  TempDir dir("steal_lab_cli_log");
  const std::string args = "run-all --config " + kQuick.string() + " --out " + dir.path.string();
  CHECK(run(args, fs::temp_directory_path(), "STEAL_LAB_LOG=info").output.find("[info]") !=
        std::string::npos);
  CHECK(run(args, fs::temp_directory_path(), "STEAL_LAB_LOG=error").output.find("[info]") ==
        std::string::npos);
  const Run odd = run(args, fs::temp_directory_path(), "STEAL_LAB_LOG=loud");
  CHECK(odd.code == kExitOk);
  CHECK(odd.output.find("[warning]") != std::string::npos);
}
