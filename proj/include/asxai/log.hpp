#pragma once

#include <functional>
#include <string>

namespace asxai {

enum class LogLevel { info, warning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Default sink writes warnings to stderr and drops info messages.
void set_log_sink(LogSink sink);
void reset_log_sink();

void log_info(const std::string& message);
void log_warning(const std::string& message);

/// Collects warnings while alive; restores the previous sink on destruction.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  int count() const { return count_; }
  const std::string& last() const { return last_; }

 private:
  LogSink previous_;
  int count_ = 0;
  std::string last_;
};

}  // namespace asxai
