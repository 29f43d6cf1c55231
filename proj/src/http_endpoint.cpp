#include <cstdlib>

#include <httplib.h>

#include "pdintent/agent_gateway.hpp"

namespace pdintent {

HttpEndpoint::HttpEndpoint(std::string url, std::string api_key_env, std::chrono::seconds timeout)
    : api_key_env_(std::move(api_key_env)), timeout_(timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw DomainError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpEndpoint::complete(const std::string& prompt, const GenerationParams& params) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (const char* key = std::getenv(api_key_env_.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const nlohmann::json body = {{"prompt", prompt}, {"temperature", params.temperature}, {"top_p", params.top_p}};
  const auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError("endpoint returned HTTP " + std::to_string(res->status));
  if (res->status != 200) throw AgentFailure("endpoint returned HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw AgentFailure(std::string("malformed endpoint response: ") + e.what());
  }
}

}  // namespace pdintent
