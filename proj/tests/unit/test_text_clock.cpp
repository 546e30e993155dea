#include <gtest/gtest.h>

#include "ctxintel/clock.hpp"
#include "ctxintel/text.hpp"
#include "oracles.hpp"

using namespace ctxintel;
using namespace std::chrono_literals;

TEST(Text, TokenizeMatchesOracle) {
    for (const std::string s : {"Movistar 4G router (DEN_MVS4_2023) ES_WLD71-T1_v2.0.201820",
                                "  ADB service, port 22; Übergang naïve ", "", "---"})
        EXPECT_EQ(text::tokenize(s), oracle::tokens(s)) << s;
}

TEST(Text, TrimLowerEquals) {
    EXPECT_EQ(text::trim("  a b\n"), "a b");
    EXPECT_EQ(text::to_lower("AbC"), "abc");
    EXPECT_TRUE(text::iequals("MoViStar", "movistar"));
    EXPECT_FALSE(text::iequals("a", "ab"));
}

TEST(Text, CodePoints) {
    const std::string s = "aé€😀";
    EXPECT_EQ(text::code_point_length(s), 4u);
    EXPECT_EQ(text::code_point_offsets(s), (std::vector<std::size_t>{0, 1, 3, 6, 10}));
}

TEST(Text, Utf8Validation) {
    EXPECT_TRUE(text::is_valid_utf8("plain é €"));
    EXPECT_FALSE(text::is_valid_utf8("\xC0\xAF"));          // overlong
    EXPECT_FALSE(text::is_valid_utf8("\xED\xA0\x80"));      // surrogate
    EXPECT_FALSE(text::is_valid_utf8("\xE2\x82"));          // truncated
    EXPECT_FALSE(text::is_valid_utf8("\xFF"));
}

TEST(Text, Sha256KnownVector) {
    EXPECT_EQ(text::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Text, Fnv1aKnownVector) {
    EXPECT_EQ(text::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(text::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Clock, TimestampFormatAndParse) {
    const auto t = parse_timestamp("2024-03-13T07:15:07.56Z");
    ASSERT_TRUE(t);
    EXPECT_EQ(format_timestamp(*t), "2024-03-13T07:15:07.560Z");
    EXPECT_EQ(format_timestamp(*parse_timestamp("2024-03-13T07:15:07")), "2024-03-13T07:15:07.000Z");
    EXPECT_FALSE(parse_timestamp("2024-03-13"));
    EXPECT_FALSE(parse_timestamp("yesterday"));
}

TEST(Clock, ManualClockAdvancesOnSleep) {
    const auto t0 = *parse_timestamp("2024-01-01T00:00:00Z");
    ManualClock c(t0);
    c.sleep_for(1500ms);
    c.advance(500ms);
    EXPECT_EQ(c.now() - t0, 2000ms);
    EXPECT_EQ(c.total_slept(), 1500ms);
}

TEST(Clock, FrozenClockNeverMoves) {
    const auto t0 = *parse_timestamp("2024-01-01T00:00:00Z");
    ManualClock c(t0, true);
    c.sleep_for(10s);
    EXPECT_EQ(c.now(), t0);
    EXPECT_EQ(c.total_slept(), 10000ms);
}
