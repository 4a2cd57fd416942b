import random
from datetime import datetime, timezone

import pytest

from helpers import FIXED_AT, make_chunk, scored, synthetic_vocab
from oracles import max_fitting_suffix
from ragx.mcp import ToolDescriptor
from ragx.prompt_budget import (
    SECTION_OVERHEAD_TOKENS,
    TOOL_CALL_INSTRUCTION,
    AssembledPrompt,
    Budget,
    ChatMessage,
    PromptOverflowError,
    PromptParts,
    assemble,
    context_entry,
    merge_answer_parts,
    wrap_tool_chunk,
)
from ragx.tokenization import count_tokens


def msg(role: str, content: str) -> ChatMessage:
    return ChatMessage(role=role, content=content, at=FIXED_AT)


def simple_parts(**overrides) -> PromptParts:
    defaults = dict(
        system_preamble="Answer briefly.",
        chunks=[
            scored(make_chunk("Refunds post in five days.", uri="kb://refunds")),
            scored(make_chunk("Fees are waived once.", uri="kb://fees")),
        ],
        history=[msg("user", "hi"), msg("assistant", "hello")],
        latest_user=msg("user", "How long do refunds take?"),
    )
    defaults.update(overrides)
    return PromptParts(**defaults)


def echo_tool() -> ToolDescriptor:
    return ToolDescriptor(
        endpoint_name="stub",
        tool_name="echo",
        description="Echo arguments back.",
        input_schema={"type": "object"},
    )


WIDE = Budget(context_tokens=10_000, reserved_generation_tokens=100)


class TestRendering:
    def test_context_entries_are_single_lines(self):
        entry = scored(make_chunk("line one\n\nline  two", uri="kb://x"))
        assert context_entry(3, entry) == "[3] (kb://x) line one line two"

    def test_flattening_preserves_token_count(self):
        body = "alpha beta\n\ngamma\n- delta"
        entry = scored(make_chunk(body, uri="kb://x"))
        line = context_entry(1, entry)
        prefix = count_tokens("[1] (kb://x)")
        assert count_tokens(line) == prefix + count_tokens(body)

    def test_section_layout(self):
        out = assemble(simple_parts(), WIDE)
        blocks = out.prompt.split("\n\n")
        assert blocks[0] == "Answer briefly."
        assert blocks[1].startswith("## Context\n[1] (kb://refunds) ")
        assert blocks[1].count("\n") == 2
        assert blocks[2] == (
            "## Conversation\nuser: hi\nassistant: hello\n"
            "user: How long do refunds take?"
        )

    def test_tools_section_when_tools_present(self):
        out = assemble(simple_parts(tool_descriptors=[echo_tool()]), WIDE)
        blocks = out.prompt.split("\n\n")
        assert blocks[2].startswith("## Tools\n- echo (stub): Echo arguments back.")
        assert '  parameters: {"type":"object"}' in blocks[2]
        assert blocks[2].endswith(TOOL_CALL_INSTRUCTION)

    def test_no_tools_section_without_tools(self):
        out = assemble(simple_parts(), WIDE)
        assert "## Tools" not in out.prompt

    def test_empty_context_keeps_header(self):
        out = assemble(simple_parts(chunks=[]), WIDE)
        assert "## Context\n\n" in out.prompt + "\n\n"

    def test_latest_user_is_last_line(self):
        out = assemble(simple_parts(), WIDE)
        assert out.prompt.endswith("user: How long do refunds take?")


class TestValidation:
    def test_latest_user_required(self):
        with pytest.raises(ValueError, match="latest"):
            assemble(simple_parts(latest_user=None), WIDE)

    def test_latest_must_be_user_role(self):
        with pytest.raises(ValueError, match="user role"):
            assemble(simple_parts(latest_user=msg("assistant", "x")), WIDE)

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError, match="role"):
            msg("wizard", "x")

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            Budget(context_tokens=10, reserved_generation_tokens=10)
        with pytest.raises(ValueError):
            Budget(context_tokens=10, reserved_generation_tokens=-1)
        assert Budget(100, 25).available_tokens == 75


def prompt_cost(out: AssembledPrompt, parts: PromptParts) -> int:
    """Recount the assembled prompt the way the budget does: exact
    tokens plus the per-section margin."""
    sections = out.prompt.count("## ") + (1 if parts.system_preamble.strip() else 0)
    return count_tokens(out.prompt) + sections * SECTION_OVERHEAD_TOKENS


class TestShedding:
    def test_full_fit_keeps_everything(self):
        parts = simple_parts()
        out = assemble(parts, WIDE)
        assert out.retained_history == len(parts.history)
        assert out.retained_chunks == len(parts.chunks)

    def test_history_drops_before_chunks(self):
        parts = simple_parts(
            history=[msg("user", "old words " * 30), msg("assistant", "fine")]
        )
        base = assemble(parts, WIDE)
        assert base.retained_history == 2

        tight = Budget(
            context_tokens=prompt_cost(base, parts) - 10,
            reserved_generation_tokens=0,
        )
        out = assemble(parts, tight)
        assert out.retained_chunks == len(parts.chunks)
        assert out.retained_history < 2

    def test_history_is_contiguous_newest_suffix(self):
        history = [msg("user", f"turn {i} " + "pad " * 10) for i in range(6)]
        parts = simple_parts(history=history)
        base = assemble(simple_parts(history=[]), WIDE)
        core = prompt_cost(base, parts)
        costs = [count_tokens(f"{m.role}: {m.content}") for m in history]
        out = assemble(parts, Budget(core + sum(costs[-3:]), 0))
        assert out.retained_history == 3
        kept = [f"turn {i}" for i in range(6 - out.retained_history, 6)]
        for label in kept:
            assert label in out.prompt
        for label in [f"turn {i}" for i in range(6 - out.retained_history)]:
            assert label not in out.prompt

    def test_chunks_drop_from_the_end(self):
        chunks = [
            scored(make_chunk("first candidate " + "pad " * 12, uri="kb://1")),
            scored(make_chunk("second candidate " + "pad " * 12, uri="kb://2")),
            scored(make_chunk("third candidate " + "pad " * 12, uri="kb://3")),
        ]
        parts = simple_parts(chunks=chunks, history=[])
        wide = assemble(parts, WIDE)
        tight = Budget(
            context_tokens=prompt_cost(wide, parts) - 5,
            reserved_generation_tokens=0,
        )
        out = assemble(parts, tight)
        assert out.retained_chunks == 2
        assert "kb://1" in out.prompt and "kb://2" in out.prompt
        assert "kb://3" not in out.prompt
        assert out.retained_history == 0

    def test_overflow_when_irreducible(self):
        parts = simple_parts(
            chunks=[], history=[], latest_user=msg("user", "question " * 50)
        )
        with pytest.raises(PromptOverflowError, match="only"):
            assemble(parts, Budget(context_tokens=40, reserved_generation_tokens=0))

    def test_monotone_in_budget(self):
        parts = simple_parts(
            chunks=[scored(make_chunk("pad " * 15, uri=f"kb://{i}")) for i in range(4)],
            history=[msg("user", "pad " * 10) for _ in range(4)],
        )
        prev_h = prev_c = -1
        for total in range(80, 400, 7):
            try:
                out = assemble(parts, Budget(total, 0))
            except PromptOverflowError:
                assert prev_h == -1
                continue
            assert out.retained_history >= prev_h
            assert out.retained_chunks >= prev_c
            prev_h, prev_c = out.retained_history, out.retained_chunks


class TestSuffixOracle:
    def test_history_retention_matches_suffix_scan(self):
        rng = random.Random(13)
        vocab = synthetic_vocab(rng, 20)
        for _ in range(60):
            history = [
                msg(
                    rng.choice(["user", "assistant"]),
                    " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 12))),
                )
                for _ in range(rng.randint(0, 8))
            ]
            parts = simple_parts(history=history, chunks=[])
            budget = Budget(rng.randint(60, 200), 0)

            # Cost of the prompt with no history at all.
            base = assemble(
                PromptParts(
                    system_preamble=parts.system_preamble,
                    chunks=[],
                    history=[],
                    latest_user=parts.latest_user,
                ),
                Budget(10_000, 0),
            )
            core = prompt_cost(base, parts)
            if core > budget.available_tokens:
                with pytest.raises(PromptOverflowError):
                    assemble(parts, budget)
                continue
            costs = [count_tokens(f"{m.role}: {m.content}") for m in history]
            expected = max_fitting_suffix(costs, budget.available_tokens - core)
            assert assemble(parts, budget).retained_history == expected


class TestAccounting:
    def test_counted_cost_never_exceeds_available(self):
        rng = random.Random(14)
        vocab = synthetic_vocab(rng, 25)
        for _ in range(120):
            chunks = [
                scored(
                    make_chunk(
                        " ".join(rng.choice(vocab) for _ in range(rng.randint(2, 30))),
                        uri=f"kb://{i}",
                    )
                )
                for i in range(rng.randint(0, 5))
            ]
            history = [
                msg("user", " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 15))))
                for _ in range(rng.randint(0, 6))
            ]
            parts = simple_parts(chunks=chunks, history=history)
            budget = Budget(rng.randint(50, 500), rng.randint(0, 20))
            try:
                out = assemble(parts, budget)
            except PromptOverflowError:
                continue
            assert prompt_cost(out, parts) <= budget.available_tokens


class TestMerge:
    def test_tool_chunks_appended_and_tools_dropped(self):
        tool_chunk = make_chunk("result text", source_id="mcp:stub", uri="mcp:stub/echo")
        parts = simple_parts(tool_descriptors=[echo_tool()])
        merged = merge_answer_parts(parts, [tool_chunk])
        assert merged.tool_descriptors == []
        assert len(merged.chunks) == 3
        assert merged.chunks[-1].chunk.id == tool_chunk.id
        out = assemble(merged, WIDE)
        assert "[3] (mcp:stub/echo) result text" in out.prompt
        assert "## Tools" not in out.prompt

    def test_wrap_preserves_chunk(self):
        chunk = make_chunk("x y z")
        wrapped = wrap_tool_chunk(chunk)
        assert wrapped.chunk is chunk
        assert wrapped.source_id == chunk.source_id
