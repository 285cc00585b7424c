// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using lnseg::test::read_text;
using lnseg::test::TempDir;

namespace {

struct Invocation {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs the command-line tool with `args` (already shell-quoted where
/// needed) and captures its exit status and both streams.
Invocation run_cli(const TempDir& scratch, const std::string& args) {
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  const std::string cmd = "env -u LNSEG_OUTPUT_ROOT '" + std::string(LNSEG_CLI_PATH) + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Invocation inv;
  inv.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  inv.out = read_text(out);
  inv.err = read_text(err);
  return inv;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("count-params prints the published counts") {
    TempDir dir("cli_count");
    const auto inv = run_cli(dir, "count-params");
    CHECK(inv.exit_code == 0);
    CHECK(inv.out.find("E-D5 4715441") != std::string::npos);
    CHECK(inv.out.find("E-D6 18882481") != std::string::npos);
    CHECK(inv.out.find("E-D7 75528113") != std::string::npos);
  }

  TEST_CASE("synth then validate succeeds") {
    TempDir dir("cli_synth");
    const auto data = dir / "data";
    const auto s = run_cli(dir, "synth --out " + quoted(data) + " --count 6 --dim 32");
    CHECK(s.exit_code == 0);
    CHECK(std::filesystem::exists(data / "config.json"));
    CHECK(std::filesystem::exists(data / "annotations.csv"));
    const auto v = run_cli(dir, "validate --config " + quoted(data / "config.json"));
    CHECK(v.exit_code == 0);
    CHECK(v.out.find("status: valid") != std::string::npos);
    CHECK(v.out.find("training cells: 10") != std::string::npos);
  }

  TEST_CASE("configuration problems exit with 1") {
    TempDir dir("cli_bad");
    const auto missing = run_cli(dir, "validate --config " + quoted(dir / "nope.json"));
    CHECK(missing.exit_code == 1);
    CHECK(missing.err.find("nope.json") != std::string::npos);

    const auto data = dir / "data";
    REQUIRE(run_cli(dir, "synth --out " + quoted(data) + " --count 6 --dim 32").exit_code == 0);
    nlohmann::json j;
    std::ifstream(data / "config.json") >> j;
    j["folds"] = 1;
    std::ofstream(data / "bad.json") << j.dump(2);
    const auto bad = run_cli(dir, "validate --config " + quoted(data / "bad.json"));
    CHECK(bad.exit_code == 1);
    CHECK(bad.out.find("folds: need at least 2") != std::string::npos);

    const auto run = run_cli(dir, "run --stage train --config " + quoted(data / "bad.json"));
    CHECK(run.exit_code == 1);
    CHECK(run.err.find("folds") != std::string::npos);

    const auto stage = run_cli(dir, "run --stage deploy --config " + quoted(data / "config.json"));
    CHECK(stage.exit_code == 1);

    CHECK(run_cli(dir, "frobnicate").exit_code == 1);
  }

  TEST_CASE("missing upstream artifacts exit with 2") {
    TempDir dir("cli_dep");
    const auto data = dir / "data";
    REQUIRE(run_cli(dir, "synth --out " + quoted(data) + " --count 6 --dim 32").exit_code == 0);
    const auto inv =
        run_cli(dir, "run --stage rate --config " + quoted(data / "config.json") + " --out " + quoted(dir / "runs"));
    CHECK(inv.exit_code == 2);
    CHECK(inv.err.find("manifest") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "runs" / "ratings"));
  }

  TEST_CASE("ingest stage runs and honours --out") {
    TempDir dir("cli_ingest");
    const auto data = dir / "data";
    REQUIRE(run_cli(dir, "synth --out " + quoted(data) + " --count 6 --dim 32").exit_code == 0);
    const auto inv =
        run_cli(dir, "run --stage ingest --config " + quoted(data / "config.json") + " --out " + quoted(dir / "o"));
    CHECK(inv.exit_code == 0);
    CHECK(std::filesystem::exists(dir / "o" / "ingest" / "folds.json"));
    CHECK_FALSE(std::filesystem::exists(data / "runs"));
  }
}
