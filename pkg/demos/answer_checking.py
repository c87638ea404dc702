"""How a prompt is built and a generation is scored.

Usage: python3 demos/answer_checking.py
"""

import math

from reticl.corpus import Example
from reticl.environment import (
    build_prompt,
    check_correct,
    extract_final_answer,
    reward_breakdown,
)

shot = Example(
    id="gsm8k-demo",
    problem_text="A baker makes 4 trays of 12 muffins. How many muffins in total?",
    solution_text="4 trays of 12 muffins is 4 * 12 = 48 muffins. Final Answer: 48",
    final_answer="48",
)
query = Example(
    id="gsm8k-query",
    problem_text="Sam had 10 apples and ate 3. How many are left?",
    solution_text="",
    final_answer="7",
)

print("--- prompt sent to the model ---")
print(build_prompt([shot], query))
print("--------------------------------")
print()

generation = " Sam has 10 - 3 = 7 apples left. Final Answer: 7"
token_logprobs = [math.log(0.9)] * 12  # a fairly confident generation

predicted = extract_final_answer(generation)
correct = check_correct(predicted, query.final_answer)
reward = reward_breakdown(correct, token_logprobs)

print(f"generated:  {generation!r}")
print(f"extracted:  {predicted!r}  (gold {query.final_answer!r})  correct={correct}")
print(f"goal reward       {reward.goal:+.3f}")
print(f"confidence reward {reward.confidence:+.3f}   (2 * inverse perplexity - 1)")
print(f"terminal reward   {reward.terminal:+.3f}")
print()

# the checker is whole-string: substrings never count
print("substring rejection:")
for pred, gold in [("7", "7"), ("17", "7"), ("blue", "blue whale")]:
    print(f"    {pred!r} vs {gold!r} -> {check_correct(pred, gold)}")
