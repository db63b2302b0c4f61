"""Hand-written model outputs and the elements a tolerant parser should pull out.

Canvas is 100x200. ``expected`` is a list of ``(type, left, top, width, height)``;
``None`` means the text must raise ParseFailure. ``cgl`` marks fixtures
parsed with embellishment allowed.
"""

CANVAS = (100, 200)

T = '<div class="text" style="left: 10px; top: 20px; width: 30px; height: 40px"></div>'
L = '<div class="logo" style="left: 1px; top: 2px; width: 3px; height: 4px"></div>'
U = '<div class="underlay" style="left: 5px; top: 15px; width: 50px; height: 60px"></div>'
CANVAS_DIV = '<div class="canvas" style="left: 0px; top: 0px; width: 100px; height: 200px"></div>'

TX = ("text", 10, 20, 30, 40)
LG = ("logo", 1, 2, 3, 4)
UN = ("underlay", 5, 15, 50, 60)

FIXTURES = [
    # prose and markdown wrappers
    ("prose_before", "Sure! Here is the layout:\n" + T, [TX]),
    ("prose_after", T + "\nLet me know if you need changes.", [TX]),
    ("prose_both", "Here you go:\n" + T + "\n" + L + "\nHope this helps.", [TX, LG]),
    ("code_fence", "```html\n<html>\n<body>\n" + CANVAS_DIV + "\n" + T + "\n</body>\n</html>\n```", [TX]),
    ("code_fence_no_lang", "```\n" + U + "\n" + T + "\n```", [UN, TX]),
    ("inline_in_sentence", "I placed " + T + " near the top.", [TX]),
    ("numbered_list", "1. " + L + "\n2. " + T, [LG, TX]),
    ("two_layouts", "Option A:\n" + T + "\nOption B:\n" + L, [TX, LG]),
    ("no_html_wrapper", U, [UN]),
    ("html_comment_around", "<!-- layout -->\n" + T + "\n<!-- end -->", [TX]),
    # attribute and style variations
    ("style_before_class", '<div style="left: 10px; top: 20px; width: 30px; height: 40px" class="text"></div>', [TX]),
    ("fields_reordered", '<div class="text" style="height: 40px; width: 30px; top: 20px; left: 10px"></div>', [TX]),
    ("single_quotes", "<div class='text' style='left: 10px; top: 20px; width: 30px; height: 40px'></div>", [TX]),
    ("uppercase_tag", '<DIV CLASS="TEXT" STYLE="LEFT: 10PX; TOP: 20PX; WIDTH: 30PX; HEIGHT: 40PX"></DIV>', [TX]),
    ("mixed_case_class", '<div class="Logo" style="left: 1px; top: 2px; width: 3px; height: 4px"></div>', [LG]),
    ("no_spaces", '<div class="text" style="left:10px;top:20px;width:30px;height:40px"></div>', [TX]),
    ("extra_spaces", '<div  class = "text"  style = " left :  10px ;  top : 20px; width : 30px; height : 40px ; " ></div>', [TX]),
    ("extra_style_props", '<div class="text" style="position: absolute; left: 10px; top: 20px; width: 30px; height: 40px; color: red"></div>', [TX]),
    ("extra_attributes", '<div id="t1" class="text" data-role="title" style="left: 10px; top: 20px; width: 30px; height: 40px"></div>', [TX]),
    ("multiple_classes", '<div class="element text big" style="left: 10px; top: 20px; width: 30px; height: 40px"></div>', [TX]),
    ("self_closing", '<div class="text" style="left: 10px; top: 20px; width: 30px; height: 40px"/>', [TX]),
    ("unclosed_div", '<div class="text" style="left: 10px; top: 20px; width: 30px; height: 40px">', [TX]),
    ("decimal_coords", '<div class="text" style="left: 10.5px; top: 20.25px; width: 30px; height: 40px"></div>', [("text", 10.5, 20.25, 30, 40)]),
    ("nested_divs", '<div class="underlay" style="left: 5px; top: 15px; width: 50px; height: 60px">' + T + "</div>", [UN, TX]),
    ("newline_in_tag", '<div\n  class="text"\n  style="left: 10px; top: 20px; width: 30px; height: 40px">\n</div>', [TX]),
    # unknown classes and junk divs
    ("canvas_only_skipped", CANVAS_DIV + "\n" + T, [TX]),
    ("unknown_class", '<div class="image" style="left: 0px; top: 0px; width: 9px; height: 9px"></div>\n' + T, [TX]),
    ("unknown_class_button", '<div class="button" style="left: 0px; top: 0px; width: 9px; height: 9px"></div>\n' + L, [LG]),
    ("no_class", '<div style="left: 0px; top: 0px; width: 9px; height: 9px"></div>\n' + T, [TX]),
    ("span_ignored", '<span class="text" style="left: 0px; top: 0px; width: 9px; height: 9px"></span>\n' + L, [LG]),
    ("embellishment_not_declared", '<div class="embellishment" style="left: 0px; top: 0px; width: 9px; height: 9px"></div>\n' + T, [TX]),
    ("missing_field_skipped", '<div class="text" style="left: 10px; top: 20px; width: 30px"></div>\n' + L, [LG]),
    ("percent_units_skipped", '<div class="text" style="left: 10%; top: 20%; width: 30%; height: 40%"></div>\n' + L, [LG]),
    ("zero_width_skipped", '<div class="text" style="left: 10px; top: 20px; width: 0px; height: 40px"></div>\n' + L, [LG]),
    ("negative_height_skipped", '<div class="text" style="left: 10px; top: 20px; width: 30px; height: -4px"></div>\n' + L, [LG]),
    ("fully_outside_skipped", '<div class="text" style="left: 150px; top: 20px; width: 30px; height: 40px"></div>\n' + L, [LG]),
    # clamping
    ("clamp_right", '<div class="text" style="left: 90px; top: 20px; width: 30px; height: 40px"></div>', [("text", 90, 20, 10, 40)]),
    ("clamp_bottom", '<div class="text" style="left: 10px; top: 190px; width: 30px; height: 40px"></div>', [("text", 10, 190, 30, 10)]),
    ("clamp_negative_left", '<div class="text" style="left: -5px; top: 20px; width: 30px; height: 40px"></div>', [("text", 0, 20, 25, 40)]),
    ("clamp_whole_canvas", '<div class="underlay" style="left: -10px; top: -10px; width: 500px; height: 500px"></div>', [("underlay", 0, 0, 100, 200)]),
    # CGL vocabulary
    ("embellishment_declared", '<div class="embellishment" style="left: 0px; top: 0px; width: 9px; height: 9px"></div>', [("embellishment", 0, 0, 9, 9)], "cgl"),
    ("all_four_types", L + T + U + '<div class="embellishment" style="left: 0px; top: 0px; width: 9px; height: 9px"></div>',
     [LG, TX, UN, ("embellishment", 0, 0, 9, 9)], "cgl"),
    # zero usable elements
    ("refusal", "I cannot generate that.", None),
    ("empty", "", None),
    ("whitespace", "   \n\t  ", None),
    ("canvas_div_only", "<html>\n<body>\n" + CANVAS_DIV + "\n</body>\n</html>", None),
    ("only_unknown_classes", '<div class="image" style="left: 0px; top: 0px; width: 9px; height: 9px"></div>', None),
    ("only_broken_divs", '<div class="text" style="left: 10px; top: 20px"></div>', None),
    ("json_instead", '{"elements": [{"type": "text", "left": 10, "top": 20, "width": 30, "height": 40}]}', None),
    ("escaped_html", "&lt;div class=\"text\" style=\"left: 10px; top: 20px; width: 30px; height: 40px\"&gt;", None),
]
