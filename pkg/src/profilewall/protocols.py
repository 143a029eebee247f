"""Protocol numbers and the symbolic names profiles use for them."""

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_IPV6 = 0x86DD

ETH_TYPE_NAMES = {"ipv4": ETH_IPV4, "arp": ETH_ARP, "ipv6": ETH_IPV6}

IPPROTO_ICMP = 1
IPPROTO_IGMP = 2
IPPROTO_TCP = 6
IPPROTO_UDP = 17
IPPROTO_ICMPV6 = 58

ARP_OPS = {"request": 1, "reply": 2}
ARP_OP_NAMES = {v: k for k, v in ARP_OPS.items()}

ICMP4_TYPES = {
    "echo-reply": 0,
    "destination-unreachable": 3,
    "source-quench": 4,
    "redirect": 5,
    "echo-request": 8,
    "router-advertisement": 9,
    "router-solicitation": 10,
    "time-exceeded": 11,
    "parameter-problem": 12,
    "timestamp-request": 13,
    "timestamp-reply": 14,
}
ICMP6_TYPES = {
    "destination-unreachable": 1,
    "packet-too-big": 2,
    "time-exceeded": 3,
    "parameter-problem": 4,
    "echo-request": 128,
    "echo-reply": 129,
    "mld-listener-query": 130,
    "mld-listener-report": 131,
    "mld-listener-done": 132,
    "router-solicitation": 133,
    "router-advertisement": 134,
    "neighbor-solicitation": 135,
    "neighbor-advertisement": 136,
    "redirect": 137,
    "mldv2-listener-report": 143,
}
ICMP4_NAMES = {v: k for k, v in ICMP4_TYPES.items()}
ICMP6_NAMES = {v: k for k, v in ICMP6_TYPES.items()}
ICMP_TYPE_NAMES = set(ICMP4_TYPES) | set(ICMP6_TYPES)

IGMP_TYPES = {
    "membership-query": 0x11,
    "membership-report-v1": 0x12,
    "membership-report": 0x16,
    "leave-group": 0x17,
    "membership-report-v3": 0x22,
}
IGMP_NAMES = {v: k for k, v in IGMP_TYPES.items()}

DNS_TYPES = {
    "A": 1,
    "NS": 2,
    "CNAME": 5,
    "SOA": 6,
    "PTR": 12,
    "MX": 15,
    "TXT": 16,
    "AAAA": 28,
    "SRV": 33,
    "OPT": 41,
    "HTTPS": 65,
    "ANY": 255,
}
DNS_TYPE_NAMES = {v: k for k, v in DNS_TYPES.items()}

DHCP_TYPES = {
    "discover": 1,
    "offer": 2,
    "request": 3,
    "decline": 4,
    "ack": 5,
    "nak": 6,
    "release": 7,
    "inform": 8,
}
DHCP_TYPE_NAMES = {v: k for k, v in DHCP_TYPES.items()}

COAP_TYPES = {"CON": 0, "NON": 1, "ACK": 2, "RST": 3}
COAP_TYPE_NAMES = {v: k for k, v in COAP_TYPES.items()}
COAP_METHODS = {"GET": 1, "POST": 2, "PUT": 3, "DELETE": 4}
COAP_METHOD_NAMES = {v: k for k, v in COAP_METHODS.items()}
COAP_OPT_URI_PATH = 11

HTTP_METHODS = ("GET", "HEAD", "POST", "PUT", "DELETE", "CONNECT", "OPTIONS", "TRACE", "PATCH")
SSDP_METHODS = ("M-SEARCH", "NOTIFY")

# UDP port -> application protocol; TCP 80 is http (plus payload sniffing).
UDP_APP_PORTS = {53: "dns", 5353: "mdns", 67: "dhcp", 68: "dhcp", 5683: "coap", 1900: "ssdp"}
TCP_APP_PORTS = {80: "http"}

# Application protocols and the transport they ride on.
APP_TRANSPORT = {
    "dns": "udp",
    "mdns": "udp",
    "dhcp": "udp",
    "coap": "udp",
    "ssdp": "udp",
    "http": "tcp",
}
APP_PROTOCOLS = ("dns", "mdns", "dhcp", "http", "ssdp", "coap", "igmp")

# Symbolic endpoint referents allowed wherever an address is expected.
SYMBOLS = ("self", "local", "gateway", "phone", "any")
