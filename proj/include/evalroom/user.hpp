#pragma once

#include <optional>
#include <set>
#include <string>

#include "evalroom/clock.hpp"

namespace evalroom {

enum class UserRole { worker, admin };

std::string_view to_string(UserRole role);
UserRole user_role_from_string(std::string_view text);

struct UserRecord {
    std::string id;
    UserRole role = UserRole::worker;
    std::optional<std::string> secret_hash;  // absent for crowd auto-signup users
    std::optional<std::string> ext_worker_id;
    std::optional<Timestamp> agreement_accepted_at;
    std::set<std::string> qualifications;    // local mirror of the crowd platform
    Timestamp created_at{};

    bool consented() const { return agreement_accepted_at.has_value(); }
    bool operator==(const UserRecord&) const = default;
};

} // namespace evalroom
