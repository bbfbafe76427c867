#pragma once

// JSON-over-HTTP binding of SurveyService:
//   POST /session          {"demographics": {...}}?        -> {"session_id"}
//   GET  /pair?session=ID                                   -> pair offer or {"complete": true}
//   POST /vote             {"session_id","pair_token","choice","client_ts"?} -> {"vote_id"}
//   POST /demographics     {"session_id", "location"?, "gender"?, "activity"?, "source"?}
//   GET  /admin/stats
//   GET  /images/<file>    static files from the images directory

#include <filesystem>
#include <optional>

namespace httplib {
class Server;
}

namespace percept {

class SurveyService;

/// Installs all survey routes on `server`. `images_dir`, when given, is
/// mounted read-only at /images/.
void register_routes(httplib::Server& server, SurveyService& service,
                     const std::optional<std::filesystem::path>& images_dir = std::nullopt);

}  // namespace percept
