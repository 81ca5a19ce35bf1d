#pragma once

#include <string>
#include <vector>

namespace seqforge {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// One multi-turn conversation: roles strictly alternate starting with "user".
struct ChatRecord {
  std::string id;
  std::vector<ChatMessage> messages;
};

}  // namespace seqforge
