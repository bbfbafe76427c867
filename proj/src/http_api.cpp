#include "percept/http_api.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "percept/error.hpp"
#include "percept/survey_service.hpp"

namespace percept {

namespace {

using nlohmann::json;

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

/// Maps library errors onto HTTP status codes.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const NotFound& e) {
    reply(res, 404, {{"error", e.what()}});
  } catch (const Conflict& e) {
    reply(res, 409, {{"error", e.what()}});
  } catch (const InvalidInput& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const ParseError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body);
  if (!j.is_object()) throw InvalidInput("request body must be a JSON object");
  return j;
}

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw InvalidInput(std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

std::optional<TimestampMs> client_timestamp(const json& j) {
  if (!j.contains("client_ts") || j["client_ts"].is_null()) return std::nullopt;
  const auto& v = j["client_ts"];
  if (v.is_number_integer()) return v.get<TimestampMs>();
  if (v.is_string()) return parse_iso8601(v.get<std::string>());
  throw InvalidInput("client_ts must be epoch milliseconds or an ISO-8601 string");
}

json descriptor(const ImageDescriptor& d) { return {{"image_id", d.image_id}, {"url", d.url}}; }

}  // namespace

void register_routes(httplib::Server& server, SurveyService& service,
                     const std::optional<std::filesystem::path>& images_dir) {
  server.Post("/session", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      std::optional<Demographics> demo;
      if (body.contains("demographics") && !body["demographics"].is_null())
        demo = demographics_from_json(body["demographics"]);
      const auto id = service.create_session(demo);
      reply(res, 201, {{"session_id", id}});
    });
  });

  server.Get("/pair", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.has_param("session")) throw InvalidInput("missing 'session' query parameter");
      const auto response = service.get_pair(req.get_param_value("session"));
      if (std::holds_alternative<Completion>(response)) {
        reply(res, 200, {{"complete", true}});
        return;
      }
      const auto& offer = std::get<PairOffer>(response);
      reply(res, 200,
            {{"complete", false},
             {"left", descriptor(offer.left)},
             {"right", descriptor(offer.right)},
             {"pair_token", offer.pair_token},
             {"pair_kind", to_string(offer.kind)}});
    });
  });

  server.Post("/vote", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      const auto session = required_string(body, "session_id");
      const auto token = required_string(body, "pair_token");
      const auto choice = parse_choice(required_string(body, "choice"));
      const auto vote_id = service.post_vote(session, token, choice, client_timestamp(body));
      reply(res, 200, {{"vote_id", vote_id}});
    });
  });

  server.Post("/demographics", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = parse_body(req);
      const auto session = required_string(body, "session_id");
      body.erase("session_id");
      const auto& fields = body.contains("demographics") ? body["demographics"] : body;
      service.set_demographics(session, demographics_from_json(fields));
      reply(res, 200, {{"ok", true}});
    });
  });

  server.Get("/admin/stats", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto st = service.stats();
      reply(res, 200,
            {{"sessions", st.sessions},
             {"votes", st.votes},
             {"votes_by_choice", st.votes_by_choice},
             {"games_multiplier", st.games_multiplier}});
    });
  });

  if (images_dir) server.set_mount_point("/images", images_dir->string());
}

}  // namespace percept
