#include "asxai/log.hpp"

#include <iostream>
#include <mutex>

namespace asxai {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

void default_sink(LogLevel level, const std::string& message) {
  if (level == LogLevel::warning) std::cerr << "warning: " << message << '\n';
}

LogSink& current_sink() {
  static LogSink sink = default_sink;
  return sink;
}

void emit(LogLevel level, const std::string& message) {
  LogSink sink;
  {
    std::lock_guard<std::mutex> lock(sink_mutex());
    sink = current_sink();
  }
  if (sink) sink(level, message);
}

}  // namespace

void set_log_sink(LogSink sink) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  current_sink() = std::move(sink);
}

void reset_log_sink() { set_log_sink(default_sink); }

void log_info(const std::string& message) { emit(LogLevel::info, message); }
void log_warning(const std::string& message) { emit(LogLevel::warning, message); }

WarningCapture::WarningCapture() {
  {
    std::lock_guard<std::mutex> lock(sink_mutex());
    previous_ = current_sink();
  }
  set_log_sink([this](LogLevel level, const std::string& message) {
    if (level != LogLevel::warning) return;
    ++count_;
    last_ = message;
  });
}

WarningCapture::~WarningCapture() { set_log_sink(previous_); }

}  // namespace asxai
