#include "nexus/http_service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <stdexcept>

namespace nexus {

using nlohmann::json;

namespace {

json turn_json(const Turn& t) {
  json j{{"speaker", t.speaker}, {"text", t.text}, {"is_dull", t.is_dull}, {"simulated", t.simulated}};
  if (t.neg_pmi) j["neg_pmi"] = *t.neg_pmi;
  if (t.log_prob) j["log_prob"] = *t.log_prob;
  if (t.seed) j["seed"] = *t.seed;
  return j;
}

json settings_json(const DecodeSettings& s) {
  return {{"mode", to_string(s.mode)},
          {"beam_size", s.beam_size},
          {"temperature", s.temperature},
          {"n_prior_samples", s.n_prior_samples},
          {"max_len", s.max_len}};
}

// Fields present in j override base.
DecodeSettings merge_settings(DecodeSettings base, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("settings must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") {
      base.mode = parse_decode_mode(value.get<std::string>());
    } else if (key == "beam_size") {
      base.beam_size = value.get<int>();
    } else if (key == "temperature") {
      base.temperature = value.get<double>();
    } else if (key == "n_prior_samples") {
      base.n_prior_samples = value.get<int>();
    } else if (key == "max_len") {
      base.max_len = value.get<int>();
    } else {
      throw std::invalid_argument("unknown setting: " + key);
    }
  }
  base.validate();
  return base;
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  return j;
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
httplib::Server::Handler guarded(Handler h) {
  return [h](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const NotFoundError& e) {
      reply_json(res, 404, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply_json(res, 400, {{"error", std::string("bad request: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      reply_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply_json(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

struct HttpService::Impl {
  ChatService& chat;
  httplib::Server server;
  explicit Impl(ChatService& c) : chat(c) {
    // Without SO_REUSEPORT a second server on a busy port fails to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
  }
};

HttpService::HttpService(ChatService& chat, const std::string& static_dir)
    : impl_(std::make_unique<Impl>(chat)) {
  auto& srv = impl_->server;
  ChatService& svc = chat;

  srv.Get("/healthz", guarded([](const httplib::Request&, httplib::Response& res) {
            reply_json(res, 200, {{"status", "ok"}});
          }));

  srv.Post("/api/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             std::optional<DecodeSettings> settings;
             if (body.contains("settings")) settings = merge_settings(DecodeSettings{}, body["settings"]);
             reply_json(res, 200, {{"session_id", svc.create_session(settings)}});
           }));

  srv.Post(R"(/api/sessions/([0-9a-f]+)/messages)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             const json body = parse_body(req);
             if (!body.contains("text") || !body["text"].is_string()) {
               throw std::invalid_argument("text is required");
             }
             std::optional<DecodeSettings> settings;
             if (body.contains("settings")) settings = merge_settings(svc.settings(id), body["settings"]);
             const Turn t = svc.respond(id, body["text"].get<std::string>(), settings);
             json out{{"response", t.text}, {"is_dull", t.is_dull}, {"log_prob", *t.log_prob}, {"seed", *t.seed}};
             if (t.neg_pmi) out["neg_pmi"] = *t.neg_pmi;
             reply_json(res, 200, out);
           }));

  srv.Post(R"(/api/sessions/([0-9a-f]+)/simulate)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             const json body = parse_body(req);
             const int max_turns = body.value("max_turns", 10);
             const SimulationResult r = svc.simulate(id, max_turns);
             json transcript = json::array();
             for (const auto& t : r.transcript) transcript.push_back(turn_json(t));
             reply_json(res, 200,
                        {{"transcript", transcript}, {"turn_count", r.turn_count}, {"stop_reason", r.stop_reason}});
           }));

  srv.Get(R"(/api/sessions/([0-9a-f]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            json transcript = json::array();
            for (const auto& t : svc.transcript(id)) transcript.push_back(turn_json(t));
            reply_json(res, 200,
                       {{"session_id", id}, {"settings", settings_json(svc.settings(id))}, {"transcript", transcript}});
          }));

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) res.set_content(json{{"error", "not found"}}.dump(), "application/json");
  });

  if (!static_dir.empty() && !srv.set_mount_point("/", static_dir)) {
    throw std::invalid_argument("static directory not found: " + static_dir);
  }
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpService::run() {
  if (!impl_->server.listen_after_bind()) throw std::runtime_error("server stopped with an error");
}

void HttpService::stop() {
  if (impl_) impl_->server.stop();
}

bool HttpService::running() const { return impl_->server.is_running(); }

}  // namespace nexus
