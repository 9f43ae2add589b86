#pragma once

#include <charconv>
#include <filesystem>
#include <string>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "metanet/serve.hpp"

#include <httplib.h>
#include <json.hpp>

namespace metanet {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}, {"status", status}});
}

/// Runs `handler`, translating the library's exception types to HTTP status codes.
template <typename F>
void guarded(httplib::Response& res, F&& handler) {
  try {
    handler();
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, std::string("invalid JSON: ") + e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, e.what());
  } catch (const BusyError& e) {
    send_error(res, 503, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

inline std::size_t parse_limit(const httplib::Request& req, std::size_t fallback) {
  if (!req.has_param("limit")) return fallback;
  const auto s = req.get_param_value("limit");
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError("limit must be a non-negative integer");
  return v;
}

}  // namespace detail

/// Registers the JSON API on `server`. Static UI assets are mounted at "/"
/// when `static_dir` exists.
inline void mount_api(httplib::Server& server, SuggestionService& service,
                      const std::filesystem::path& static_dir = {}) {
  using detail::guarded;
  using detail::send_json;

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Get("/api/candidates", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string status = req.has_param("status") ? req.get_param_value("status") : "pending";
      if (status != "pending") throw ValidationError("status must be pending");
      const auto limit = detail::parse_limit(req, 50);
      nlohmann::json items = nlohmann::json::array();
      for (const auto& c : service.store().pending(limit)) {
        auto item = to_json(c);
        auto s = service.try_suggest(c.window, c.id);
        item["suggestion"] = s ? to_json(*s) : nlohmann::json(nullptr);
        items.push_back(std::move(item));
      }
      send_json(res, 200, {{"candidates", items}, {"pending", service.store().pending_count()}});
    });
  });

  server.Post("/api/suggest", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      const auto& tokens = body.at("tokens");
      if (!tokens.is_array() || tokens.size() != kWindowSize) throw ValidationError("tokens must hold exactly 11 strings");
      TokenWindow w;
      for (std::size_t i = 0; i < kWindowSize; ++i) w.slots[i] = tokens[i].get<std::string>();
      send_json(res, 200, to_json(service.suggest(w, body.value("candidate_id", ""))));
    });
  });

  server.Post("/api/annotations", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      if (!body.contains("candidate_id") || !body.contains("label") || !body.contains("annotator")) {
        throw ValidationError("candidate_id, label and annotator are required");
      }
      if (!body.at("label").is_number_integer()) throw ValidationError("label must be 0 or 1");
      Annotation a = annotation_from_json(body);
      a.seq = 0;
      a.timestamp.clear();
      send_json(res, 200, {{"id", service.annotate(std::move(a))}});
    });
  });

  server.Post("/api/retrain", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<std::uint64_t> seed;
      std::optional<TrainingFilter> filter;
      if (!req.body.empty()) {
        const auto body = nlohmann::json::parse(req.body);
        if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
        if (body.contains("train_on")) {
          const auto& t = body.at("train_on");
          filter = TrainingFilter{t.at("group_by").get<std::string>(), t.at("value").get<std::string>()};
        }
      }
      send_json(res, 200, to_json(service.retrain(seed, filter)));
    });
  });

  server.Get("/api/model", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto model = service.registry().active();
      if (!model) throw ConflictError("cold start: no active model");
      auto body = to_json(model->info);
      body["retraining"] = service.retraining();
      send_json(res, 200, body);
    });
  });

  server.Get("/api/metrics", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string group_by = req.has_param("group_by") ? req.get_param_value("group_by") : "violent_word";
      nlohmann::json out = nlohmann::json::object();
      for (const auto& [key, m] : service.grouped_metrics(group_by)) out[key] = to_json(m);
      send_json(res, 200, {{"group_by", group_by}, {"groups", out}});
    });
  });

  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) {
    server.set_mount_point("/", static_dir.string());
  }
}

}  // namespace metanet
