#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "evalroom/clock.hpp"

namespace evalroom {

enum class AuthorRole { human, bot, seed };

std::string_view to_string(AuthorRole role);
AuthorRole author_role_from_string(std::string_view text); // throws std::invalid_argument

struct ChatMessage {
    std::int64_t seq = 0;
    std::string author_id;
    AuthorRole author_role = AuthorRole::human;
    std::string speaker_label;
    std::string text;
    bool is_seed = false;
    Timestamp created_at{};

    bool operator==(const ChatMessage&) const = default;
};

} // namespace evalroom
