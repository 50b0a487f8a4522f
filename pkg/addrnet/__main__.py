from addrnet.bin.addrnet import cli

if __name__ == "__main__":
    cli()
