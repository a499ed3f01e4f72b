#include <catch2/catch_amalgamated.hpp>
#include "fbsdelda/fbsdelda.hpp"
