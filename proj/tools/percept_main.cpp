#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <thread>

#include "percept/csv.hpp"
#include "percept/error.hpp"
#include "percept/event_store.hpp"
#include "percept/http_api.hpp"
#include "percept/pipeline.hpp"
#include "percept/scheduler.hpp"
#include "percept/stats.hpp"
#include "percept/survey_service.hpp"

// After the library headers: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>

namespace fs = std::filesystem;
using namespace percept;

namespace {

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  fs::path images_dir;
  fs::path store_dir;
  fs::path scheduler_config;
  fs::path out;
  std::uint64_t snapshot_every = 1000;
  bool no_fsync = false;
};

std::unique_ptr<SurveyService> open_service(const fs::path& scheduler_config, const fs::path& store_dir,
                                            std::uint64_t snapshot_every, bool fsync) {
  auto file = load_scheduler_config(scheduler_config);
  auto scheduler = std::make_shared<const PairScheduler>(std::move(file.images), std::move(file.config));
  ServiceOptions options;
  options.snapshot_every = snapshot_every;
  return std::make_unique<SurveyService>(scheduler, std::make_unique<FileEventStore>(store_dir, FileStoreOptions{fsync}),
                                         options);
}

void export_state(const SurveyService& service, const fs::path& out) {
  fs::create_directories(out);
  service.export_votes(out / "votes.csv");
  service.export_sessions(out / "sessions.csv");
}

int serve(const ServeArgs& args) {
  if (args.scheduler_config.empty()) throw InvalidInput("--scheduler-config is required");
  if (args.store_dir.empty()) throw InvalidInput("--store-dir is required");

  // Handle SIGINT/SIGTERM on a dedicated thread so shutdown can export cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto service = open_service(args.scheduler_config, args.store_dir, args.snapshot_every, !args.no_fsync);
  httplib::Server server;
  register_routes(server, *service,
                  args.images_dir.empty() ? std::nullopt : std::optional<fs::path>(args.images_dir));

  const int port = args.port == 0 ? server.bind_to_any_port(args.host) : (server.bind_to_port(args.host, args.port) ? args.port : -1);
  if (port < 0) throw IoError(fmt::format("cannot bind {}:{}", args.host, args.port));
  std::cout << "listening on " << args.host << ':' << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen_after_bind();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  service->snapshot();
  if (!args.out.empty()) export_state(*service, args.out);
  return 0;
}

void print_reports(const std::vector<pipeline::StageReport>& reports) {
  for (const auto& r : reports) {
    std::cout << "stage " << pipeline::to_string(r.stage) << ": ";
    for (std::size_t i = 0; i < r.artifacts.size(); ++i)
      std::cout << (i ? ", " : "") << r.artifacts[i].filename().string();
    std::cout << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Urban perception survey and analysis pipeline"};
  app.require_subcommand(1);

  std::string stage_name;
  fs::path config_path;
  std::optional<std::uint64_t> seed;
  fs::path out = "out";
  auto* run = app.add_subcommand("run", "Run a pipeline stage");
  run->add_option("stage", stage_name, "sample, cluster, serve, qa, rank, mlm, interpret, map or all")->required();
  run->add_option("--config", config_path, "Pipeline configuration (JSON)")->required();
  run->add_option("--seed", seed, "Override the configured seed");
  run->add_option("--out", out, "Output directory");

  ServeArgs sargs;
  auto* srv = app.add_subcommand("serve", "Run the survey HTTP service");
  srv->add_option("--host", sargs.host);
  srv->add_option("--port", sargs.port, "0 picks a free port");
  srv->add_option("--images-dir", sargs.images_dir);
  srv->add_option("--store-dir", sargs.store_dir)->required();
  srv->add_option("--scheduler-config", sargs.scheduler_config)->required();
  srv->add_option("--out", sargs.out, "Export votes.csv and sessions.csv here on shutdown");
  srv->add_option("--snapshot-every", sargs.snapshot_every);
  srv->add_flag("--no-fsync", sargs.no_fsync, "Skip fdatasync after each event");

  fs::path export_store, export_sched, export_out = "out";
  auto* exp = app.add_subcommand("export", "Recover a survey store and export votes and sessions");
  exp->add_option("--store-dir", export_store)->required();
  exp->add_option("--scheduler-config", export_sched)->required();
  exp->add_option("--out", export_out);

  std::vector<std::string> corr_inputs;
  std::string corr_column = "score";
  fs::path corr_out;
  auto* corr = app.add_subcommand("corr", "Pearson correlations between score tables");
  corr->add_option("tables", corr_inputs, "name=path.csv entries")->required()->expected(2, -1);
  corr->add_option("--column", corr_column);
  corr->add_option("--out", corr_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto config = pipeline::load_config(config_path);
      if (seed) config.seed = *seed;
      const auto stage = pipeline::parse_stage(stage_name);
      if (stage == pipeline::Stage::serve) {
        ServeArgs a = sargs;
        a.scheduler_config = out / "scheduler.conf";
        a.store_dir = config.paths.store.empty() ? out / "store" : config.paths.store;
        a.out = out;
        if (!fs::exists(a.scheduler_config))
          throw pipeline::MissingPrerequisite(pipeline::Stage::cluster, a.scheduler_config);
        return serve(a);
      }
      print_reports(pipeline::run(stage, config, out));
    } else if (srv->parsed()) {
      return serve(sargs);
    } else if (exp->parsed()) {
      auto service = open_service(export_sched, export_store, 1000, true);
      export_state(*service, export_out);
      std::cout << service->votes().size() << " votes, " << service->sessions().size() << " sessions\n";
    } else if (corr->parsed()) {
      std::vector<stats::NamedScores> tables;
      for (const auto& entry : corr_inputs) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw InvalidInput("expected name=path, got '" + entry + "'");
        tables.push_back({entry.substr(0, eq), stats::read_score_table(entry.substr(eq + 1), corr_column)});
      }
      const auto text = stats::format_correlations(stats::pearson_corr(tables));
      if (corr_out.empty()) std::cout << text;
      else csv::write_file_atomic(corr_out, text);
    }
  } catch (const pipeline::MissingPrerequisite& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
