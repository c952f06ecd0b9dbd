#pragma once

// Single include point for the vendored nlohmann/json header so library code
// does not depend on the vendor directory layout.
#include <json.hpp>
