#include <chrono>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "impacts/errors.hpp"
#include "impacts/hash.hpp"
#include "impacts/icl.hpp"

namespace impacts {

namespace {

// Splits "https://host:port/prefix" into the origin httplib wants and the
// path prefix to prepend to chat_path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw ConfigError("endpoint base_url must include a scheme: " + url);
  }
  const std::size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

std::string provider_message(const std::string& body) {
  try {
    nlohmann::json j = nlohmann::json::parse(body);
    if (j.contains("error")) {
      const auto& err = j.at("error");
      if (err.is_object() && err.contains("message")) {
        return err.at("message").get<std::string>();
      }
      if (err.is_string()) return err.get<std::string>();
    }
  } catch (const nlohmann::json::exception&) {
  }
  return body.substr(0, 200);
}

}  // namespace

HttpCompletionClient::HttpCompletionClient(EndpointConfig config)
    : config_(std::move(config)) {
  if (config_.base_url.empty()) throw ConfigError("endpoint base_url not set");
  if (config_.model.empty()) throw ConfigError("endpoint model not set");
  if (config_.credential_env.empty()) {
    throw ConfigError("endpoint credential_env not set");
  }
  const char* cred = std::getenv(config_.credential_env.c_str());
  if (!cred || !*cred) {
    throw ConfigError("credential environment variable " +
                      config_.credential_env + " is not set");
  }
  credential_ = cred;
}

std::string HttpCompletionClient::complete(const PromptBundle& bundle) {
  const auto [origin, prefix] = split_url(config_.base_url);
  const std::string path = prefix + config_.chat_path;
  const std::string request_hash = hex64(fnv1a64(bundle.text));

  nlohmann::ordered_json body;
  body["model"] =
      bundle.decoding.model.empty() ? config_.model : bundle.decoding.model;
  body["messages"] = {{{"role", "user"}, {"content", bundle.text}}};
  body["temperature"] = bundle.decoding.temperature;
  body["max_tokens"] = bundle.decoding.max_tokens;
  const std::string payload = body.dump();

  httplib::Client client(origin);
  client.set_connection_timeout(config_.timeout_s, 0);
  client.set_read_timeout(config_.timeout_s, 0);
  client.set_write_timeout(config_.timeout_s, 0);
  httplib::Headers headers = {
      {"Authorization", "Bearer " + credential_},
  };

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, payload, "application/json");
    const auto latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - started)
            .count();
    if (res && res->status >= 200 && res->status < 300) {
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed provider response: ") +
                             e.what());
      }
      std::string usage = "n/a";
      if (parsed.contains("usage") &&
          parsed["usage"].contains("total_tokens")) {
        usage = std::to_string(
            parsed["usage"]["total_tokens"].get<long long>());
      }
      std::cerr << "[icl] request " << request_hash << " attempt " << attempt
                << " status " << res->status << " latency_ms " << latency_ms
                << " tokens " << usage << '\n';
      try {
        return parsed.at("choices").at(0).at("message").at("content")
            .get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw TransportError(
            "provider response has no choices[0].message.content");
      }
    }
    const bool transport_failure = !res;
    const bool rate_limited = res && res->status == 429;
    std::cerr << "[icl] request " << request_hash << " attempt " << attempt
              << (transport_failure
                      ? " transport error"
                      : " status " + std::to_string(res->status))
              << " latency_ms " << latency_ms << '\n';
    if (!transport_failure && !rate_limited) {
      throw TransportError("endpoint returned HTTP " +
                               std::to_string(res->status) + ": " +
                               provider_message(res->body),
                           res->status);
    }
    last_error = transport_failure
                     ? "transport failure: " + httplib::to_string(res.error())
                     : "HTTP 429: " + provider_message(res->body);
    if (attempt < config_.max_attempts) {
      const auto delay = std::chrono::milliseconds(
          static_cast<long long>(config_.retry_base_ms) << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }
  }
  throw TransportError("retries exhausted after " +
                       std::to_string(config_.max_attempts) +
                       " attempts; last error: " + last_error);
}

}  // namespace impacts
