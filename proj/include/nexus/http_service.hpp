#pragma once

#include "nexus/inference.hpp"

#include <memory>
#include <string>

namespace nexus {

// JSON over HTTP in front of a ChatService:
//   POST /api/sessions                     -> {session_id}
//   POST /api/sessions/{id}/messages       {text, settings?}
//   POST /api/sessions/{id}/simulate       {max_turns}
//   GET  /api/sessions/{id}                -> transcript and settings
//   GET  /healthz                          -> {status}
class HttpService {
 public:
  explicit HttpService(ChatService& chat, const std::string& static_dir = "");
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nexus
