#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "portdec/commands.hpp"
#include "portdec/config.hpp"
#include "portdec/errors.hpp"
#include "portdec/report.hpp"

using namespace portdec;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTiny = R"(
name = tiny
model.variant = ou
model.alpha = 0.5
model.beta = 1.0
model.v = 0.3
model.u0 = 0.2
utility.name = power
utility.p = 0.5
grid.n_steps = 16
mc.n_paths = 600
mc.seed = 3
verify.eu1_paths = 300
verify.eu1_levels = 2
verify.budget_paths = 500
verify.phi1_paths = 50
verify.nested_nodes = 1
verify.nested_states = 2
verify.nested_inner = 100
)";

}  // namespace

TEST_CASE("minimal config takes the defaults") {
  const RunConfig c = parse_config("utility.name = log\n");
  CHECK(c.utility_kind == UtilityKind::log);
  CHECK(c.risk_kind == RiskKind::constant);
  CHECK(c.theta == std::vector<double>{0.4});
  CHECK(c.n_steps == 512);
  CHECK(c.n_paths == 50000);
  CHECK(c.regression.degree == 3);
  CHECK(c.truncation.mode == TruncationRequest::Mode::off);
  bool seen = false;
  for (const auto& [k, v] : c.echo()) {
    if (k == "grid.n_steps") {
      seen = true;
      CHECK(v == "512");
    }
  }
  CHECK(seen);
}

TEST_CASE("config errors name the field") {
  CHECK(error_of("utility.name = power\nutility.p = 1.0\n").find("p must satisfy p<1, p≠0") != std::string::npos);
  CHECK(error_of("utility.name = power\nutility.p = 0\n").find("p must satisfy") != std::string::npos);
  CHECK(error_of("modle.variant = ou\n").find("'modle.variant'") != std::string::npos);
  CHECK(error_of("modle.variant = ou\n").find("line 1") != std::string::npos);
  CHECK(error_of("grid.T = 1\ngrid.T = 2\n").find("duplicate") != std::string::npos);
  CHECK(error_of("grid.T\n").find("line 1") != std::string::npos);
  CHECK(error_of("grid.n_steps = many\n").find("grid.n_steps") != std::string::npos);
  CHECK(error_of("model.variant = ou\nmodel.alpha = 0.5\nmodel.beta = -1\nmodel.v = 0.3\nmodel.u0 = 0.2\n")
            .find("beta must satisfy beta>0") != std::string::npos);
  CHECK(error_of("model.variant = ou\n").find("model.alpha") != std::string::npos);
  CHECK(error_of("model.theta = 0.1, 0.2\nmarket.sigma = 1, 0, 0, 1\nmarket.s0 = 1, 1\n").empty());
  CHECK(error_of("model.theta = 0.1, 0.2\nmarket.sigma = 1, 1, 1, 1\nmarket.s0 = 1, 1\n").find("market.sigma") !=
        std::string::npos);
  CHECK(error_of("hedging.truncation = 8x\n").empty());
  CHECK(error_of("hedging.truncation = eight\n").find("hedging.truncation") != std::string::npos);
  CHECK(error_of("utility.name = log\nutility.p = 0.5\n").find("utility.p") != std::string::npos);
  CHECK(error_of("grid.n_steps = 100\n").find("verify.eu1_levels") != std::string::npos);
}

TEST_CASE("reference configs load") {
  for (const char* f : {"log_constant.cfg", "power_constant.cfg", "power_ou.cfg", "exponential_ou_nonconforming.cfg",
                        "smoke_ou.cfg"}) {
    CHECK_NOTHROW(load_config(std::string(PORTDEC_CONFIG_DIR) + "/" + f));
  }
  CHECK_THROWS_AS(load_config("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("csv formatting") {
  Series s{"demo", {}, {}};
  s.add("t", {0.0, 0.5});
  s.add("v", {-0.0, 1.0 / 3.0});
  CHECK(to_csv(s) == "t,v\n0,0\n0.5,0.333333333333\n");
  CHECK_THROWS(s.add("bad", {1.0}));
  CHECK(format_number(NAN) == "nan");
  CHECK(number_or_null(INFINITY).is_null());
}

TEST_CASE("commands are deterministic and write their outputs") {
  RunConfig c = parse_config(kTiny);
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "portdec_harness_test";
  std::filesystem::remove_all(dir);
  std::ostringstream log;
  for (Command cmd : {Command::simulate, Command::myopic, Command::hedge, Command::decompose}) {
    c.out_dir = (dir / to_string(cmd) / "a").string();
    const CommandResult a = run_command(cmd, c, log);
    write_outputs(a, c);
    c.out_dir = (dir / to_string(cmd) / "b").string();
    write_outputs(run_command(cmd, c, log), c);
    CHECK(a.summary["command"] == to_string(cmd));
    CHECK(a.summary["seed"] == 3);
    CHECK_FALSE(a.series.empty());
    for (const Series& s : a.series) {
      CHECK(s.rows() == 17);
      CHECK(slurp(dir / to_string(cmd) / "a" / (s.name + ".csv")) ==
            slurp(dir / to_string(cmd) / "b" / (s.name + ".csv")));
    }
    // the echoed output directory differs between the two runs, so compare results only
    const Json ja = Json::parse(slurp(dir / to_string(cmd) / "a" / "summary.json"));
    const Json jb = Json::parse(slurp(dir / to_string(cmd) / "b" / "summary.json"));
    CHECK(ja["results"] == jb["results"]);
    CHECK(ja["checks"] == jb["checks"]);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("command names and exit codes") {
  CHECK(parse_command("verify") == Command::verify);
  CHECK_THROWS_AS(parse_command("optimise"), ConfigError);

  RunConfig bad = parse_config(kTiny);
  bad.n_steps = 0;
  std::ostringstream log, err;
  CHECK(execute(Command::simulate, bad, log, err) == exit_code::numeric_failure);
}

TEST_CASE("cli exit codes") {
  const std::string cli = PORTDEC_CLI;
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "portdec_cli_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  {
    std::ofstream(dir / "bad.cfg") << "modle = 1\n";
    std::ofstream(dir / "tiny.cfg") << kTiny;
  }
  CHECK(status(cli + " simulate --config " + (dir / "bad.cfg").string()) == 2);
  CHECK(status(cli + " simulate --config " + (dir / "missing.cfg").string()) == 2);
  CHECK(status(cli + " simulate") == 2);
  CHECK(status(cli + " simulate --config " + (dir / "tiny.cfg").string() + " --steps 3") == 2);
  CHECK(status(cli + " simulate --config " + (dir / "tiny.cfg").string() + " --out " + (dir / "o").string() +
               " --paths 200 --seed 11") == 0);
  const Json j = Json::parse(slurp(dir / "o" / "summary.json"));
  CHECK(j["config"]["mc.n_paths"] == "200");
  CHECK(j["config"]["mc.seed"] == "11");
  CHECK(std::filesystem::exists(dir / "o" / "bundle.csv"));
  // a failing check gives exit code 1: degree 0 on the OU model misses the residual threshold
  {
    std::ofstream f(dir / "deg0.cfg");
    f << kTiny << "hedging.degree = 0\n";
  }
  CHECK(status(cli + " hedge --config " + (dir / "deg0.cfg").string() + " --out " + (dir / "h").string() +
               " --paths 2000") == 1);
  std::filesystem::remove_all(dir);
}
