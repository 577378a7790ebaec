// rail-server: runs one node until SIGINT or SIGTERM.

#include <csignal>
#include <optional>
#include <string>

#include "cli_common.hpp"
#include "rail/config.hpp"
#include "rail/net.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Run a RAIL node", "rail-server"};
  std::optional<std::string> config_path;
  std::string roles = "ingest,query,mgmt";
  std::string log_level = "info";
  bool print_config = false;
  app.add_option("--config", config_path, "Config file (JSON); defaults apply to every missing key");
  app.add_option("--roles", roles, "Comma-separated subset of ingest,query,mgmt,slave")->capture_default_str();
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();
  app.add_flag("--print-config", print_config, "Print the effective config and exit");

  return rail::cli::run(app, argc, argv, [&] {
    rail::cli::set_log_level(log_level);
    const auto parsed_roles = rail::net::parse_roles(roles);
    const auto cfg = rail::config::load(config_path);
    if (print_config) {
      std::cout << rail::config::to_json(cfg).dump(2) << "\n";
      return rail::cli::kOk;
    }

    // Block the signals before any thread starts so they all inherit the mask.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    rail::net::Server server(cfg, parsed_roles);
    server.start();
    if (parsed_roles.ingest) spdlog::info("ingest on {}:{}", cfg.ingest.bind, server.ingest_port());
    if (parsed_roles.query) spdlog::info("query on {}:{}", cfg.query.bind, server.query_port());

    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {}; shutting down", sig);
    server.stop();
    return rail::cli::kOk;
  });
}
