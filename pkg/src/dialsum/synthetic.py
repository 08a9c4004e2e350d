"""Templated two-speaker booking dialogues with factual slots and domain labels."""

from __future__ import annotations

import random
import string

from .corpus import AGENT, CUSTOMER, Dialogue, tokenize

AREAS = ["north", "south", "east", "west", "centre"]
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
TIMES = ["11:30", "12:15", "13:45", "17:00", "18:30", "19:15", "20:00"]

# Each domain: opening request, details, booking request, confirmation.
DOMAINS = {
    "hotel": {
        "names": ["acorn lodge", "gonville hotel", "hamilton lodge", "lensfield hotel"],
        "turns": [
            ("i am looking for a hotel in the {area} .",
             "the {name} is a nice hotel in the {area} . it has {stars} stars ."),
            ("does the hotel have free parking and wifi ?",
             "yes , the hotel has free parking and wifi . the postcode is {postcode} ."),
            ("please book the hotel for {people} people for {nights} nights from {day} .",
             "i have booked the hotel . your reference number is {ref} ."),
        ],
    },
    "restaurant": {
        "names": ["golden curry", "pizza hut", "the missing sock", "yu garden"],
        "turns": [
            ("i want a cheap restaurant serving {food} food in the {area} .",
             "the {name} serves {food} food in the {area} . the phone is {phone} ."),
            ("can you book a table at the restaurant for {people} people at {time} ?",
             "the table at the restaurant is booked for {time} . your reference number is {ref} ."),
            ("what is the restaurant address ? i want to eat on {day} .",
             "the restaurant is at {street} regent street , table for {people} on {day} ."),
        ],
    },
    "taxi": {
        "names": ["cambridge station", "the museum", "kings college", "the airport"],
        "turns": [
            ("i need a taxi to {name} leaving at {time} .",
             "i booked a taxi to {name} at {time} . the car is a red toyota ."),
            ("what is the taxi contact number ?",
             "the taxi contact number is {phone} ."),
        ],
    },
    "train": {
        "names": ["london", "ely", "norwich", "stansted"],
        "turns": [
            ("i need a train to {name} on {day} after {time} .",
             "train {train} leaves for {name} at {time} on {day} . the price is {price} pounds ."),
            ("please book the train for {people} people .",
             "i booked the train for {people} people . your reference number is {ref} ."),
        ],
    },
}

CLOSINGS = [
    ("thank you , that is all i need .", "you are welcome . goodbye ."),
    ("thanks , goodbye .", "have a nice day ."),
]
FOODS = ["chinese", "indian", "italian", "thai"]
PHONES = ["01223351880", "01223902112", "01223464630", "01223307581"]


def _code(rng: random.Random, length: int = 8) -> str:
    letters = rng.choices(string.ascii_lowercase, k=length - 2)
    digits = rng.choices(string.digits, k=2)
    chars = letters + digits
    rng.shuffle(chars)
    # ensure a letter lands first so the token never reads as a number
    return rng.choice(string.ascii_lowercase) + "".join(chars[1:])


def _postcode(rng: random.Random) -> str:
    return "cb" + str(rng.randint(1, 4)) + str(rng.randint(1, 9)) + rng.choice("ab") + rng.choice("dq")


def make_synthetic(n_dialogues: int = 200, n_domains: int = 2, seed: int = 0, code_pool: int = 20) -> list[Dialogue]:
    """Build ``n_dialogues`` single-domain dialogues cycling through ``n_domains`` domains.

    Every dialogue contains factual tokens (counts, times, reference codes);
    each domain draws reference codes from its own pool of ``code_pool`` so
    they recur often enough to enter the vocabulary.
    """
    if not 1 <= n_domains <= len(DOMAINS):
        raise ValueError(f"n_domains must be between 1 and {len(DOMAINS)}")
    rng = random.Random(seed)
    domains = list(DOMAINS)[:n_domains]
    # booking systems issue references per domain, so codes never cross domains
    codes = {d: [_code(rng) for _ in range(code_pool)] for d in domains}
    postcodes = [_postcode(rng) for _ in range(8)]
    dialogues = []
    for i in range(n_dialogues):
        domain = domains[i % n_domains]
        spec = DOMAINS[domain]
        slots = {
            "area": rng.choice(AREAS),
            "day": rng.choice(DAYS),
            "time": rng.choice(TIMES),
            "name": rng.choice(spec["names"]),
            "stars": rng.choice(["two", "three", "four", "five"]),
            "people": str(rng.randint(1, 8)),
            "nights": str(rng.randint(1, 5)),
            "food": rng.choice(FOODS),
            "ref": rng.choice(codes[domain]),
            "phone": rng.choice(PHONES),
            "postcode": rng.choice(postcodes),
            "street": str(rng.randint(10, 99)),
            "train": "tr" + str(rng.randint(1000, 1019)),
            "price": str(rng.choice([10, 15, 20, 25])) + "." + rng.choice(["10", "50", "90"]),
        }
        turns = []
        for cust, agent in spec["turns"]:
            turns.append((CUSTOMER, tokenize(cust.format(**slots))))
            turns.append((AGENT, tokenize(agent.format(**slots))))
        cust, agent = rng.choice(CLOSINGS)
        turns += [(CUSTOMER, tokenize(cust)), (AGENT, tokenize(agent))]
        dialogues.append(Dialogue(f"syn-{i:05d}", turns, [domain]))
    return dialogues
