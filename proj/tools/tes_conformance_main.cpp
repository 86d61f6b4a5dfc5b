#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tes/conformance.hpp"
#include "tes/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Declarative conformance runner for TES servers", "tes-conformance"};
  app.require_subcommand(1);

  std::string suite_path;
  std::string base_url;
  std::string json_report;
  std::vector<std::string> var_args;
  tes::conformance::RunOptions options;
  std::string token;

  auto* run = app.add_subcommand("run", "Run a YAML suite against a server");
  run->add_option("suite", suite_path, "Suite YAML file")->required()->check(CLI::ExistingFile);
  run->add_option("--url", base_url, "Server base URL")->required();
  run->add_option("--json-report", json_report, "Write a JSON report to this path");
  run->add_option("--var", var_args, "NAME=VALUE overrides for suite variables; repeatable");
  run->add_option("--token", token, "Bearer token sent with every request");
  run->add_option("--request-timeout", options.request_timeout_s, "Seconds per request")
      ->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  for (const auto& v : var_args) {
    const auto eq = v.find('=');
    if (eq == std::string::npos) {
      std::cerr << "--var expects NAME=VALUE, got '" << v << "'\n";
      return 2;
    }
    options.variables[v.substr(0, eq)] = v.substr(eq + 1);
  }
  if (!token.empty()) options.bearer_token = token;

  tes::conformance::Suite suite;
  try {
    suite = tes::conformance::load_suite(suite_path);
  } catch (const tes::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  const auto report = tes::conformance::run_suite(suite, base_url, options);
  tes::conformance::print_report(report, std::cout);
  if (!json_report.empty()) {
    std::ofstream out(json_report);
    out << report.to_json().dump(2) << "\n";
    if (!out) {
      std::cerr << "cannot write " << json_report << "\n";
      return 2;
    }
  }
  return report.passed() ? 0 : 1;
}
