#include "q20/service.hpp"

#include <httplib.h>

namespace q20 {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const ServiceError& e) {
  send_json(res, e.http_status(), {{"code", e.code_name()}, {"message", e.what()}});
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw ServiceError(ServiceError::Code::BadRequest, "body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error&) {
    throw ServiceError(ServiceError::Code::BadRequest, "body is not valid JSON");
  }
}

template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_json(res, 500, {{"code", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace

void register_routes(httplib::Server& server, GameService& service) {
  server.Get("/healthz", guarded([&service](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200,
                         {{"status", "ok"},
                          {"model_loaded", service.has_model()},
                          {"sessions", service.session_count()}});
             }));

  server.Post("/games", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                std::optional<SelectMode> mode;
                if (body.contains("policy_mode")) {
                  try {
                    mode = parse_select_mode(body.at("policy_mode").get<std::string>());
                  } catch (const std::exception&) {
                    throw ServiceError(ServiceError::Code::BadRequest,
                                       "policy_mode must be \"greedy\" or \"sample\"");
                  }
                }
                send_json(res, 201, to_json(service.create_session(mode)));
              }));

  server.Post(R"(/games/([0-9a-zA-Z]+)/answer)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                if (!body.contains("answer") || !body.at("answer").is_string())
                  throw ServiceError(ServiceError::Code::InvalidAnswer,
                                     "body must contain \"answer\": \"yes|no|unknown\"");
                Answer a;
                try {
                  a = parse_answer(body.at("answer").get<std::string>());
                } catch (const std::invalid_argument& e) {
                  throw ServiceError(ServiceError::Code::InvalidAnswer, e.what());
                }
                send_json(res, 200, to_json(service.submit_answer(req.matches[1], a)));
              }));

  server.Post(R"(/games/([0-9a-zA-Z]+)/result)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                if (!body.contains("correct") || !body.at("correct").is_boolean())
                  throw ServiceError(ServiceError::Code::BadRequest,
                                     "body must contain \"correct\": true|false");
                send_json(res, 200,
                          to_json(service.submit_result(req.matches[1], body.at("correct").get<bool>())));
              }));

  server.Get(R"(/games/([0-9a-zA-Z]+))",
             guarded([&service](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, to_json(service.get_session(req.matches[1])));
             }));
}

void serve(GameService& service, const std::string& host, int port,
           const std::filesystem::path& static_dir) {
  httplib::Server server;
  register_routes(server, service);
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir.string()))
    throw std::runtime_error("cannot serve static files from " + static_dir.string());
  if (!server.listen(host, port))
    throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace q20
