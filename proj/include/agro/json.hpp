#pragma once

#include <json.hpp>

namespace agro {

// Ordered JSON everywhere: trace files and session_start payloads must keep
// a stable key order, so insertion-ordered objects are the project default.
using Json = nlohmann::ordered_json;

}  // namespace agro
